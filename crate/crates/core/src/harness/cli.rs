use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::checkpoint::Checkpoint;
use super::config::{DataPaths, ModelKind, Profile, RunConfig};
use super::eval::{evaluate_run, time_run};
use super::train::{train_run, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE};
use crate::dear::align::{align, dp_table, plan, Recurrence};
use crate::error::{Error, Result};
use crate::expander::{cayley_graph, choose_n};
use crate::tasks::{make_dataset, read_dataset, write_dataset, Algorithm, DatasetSpec, Split, P_GRID};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dear", version, about = "Train and evaluate equilibrium algorithmic reasoners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset, or a profile's full set of datasets.
    Gen(GenArgs),
    /// Train a model from a TOML run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one or more datasets.
    Eval(EvalArgs),
    /// Time inference against the unrolled baseline.
    Time(TimeArgs),
    /// Describe the SL(2, Z_n) Cayley graph.
    Cayley(CayleyArgs),
    /// Print the alignment table for two stored trajectories.
    AlignDebug(AlignArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    algorithm: Algorithm,
    #[arg(long, required_unless_present = "profile", conflicts_with = "profile")]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train", conflicts_with = "profile")]
    split: Split,
    /// Node counts as `lo-hi` or a single value.
    #[arg(long, default_value = "4-8", value_parser = parse_sizes, conflicts_with = "profile")]
    sizes: RangeInclusive<usize>,
    /// Write train, valid and both test sets for `desk` or `paper`.
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Override the run config stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the reports as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TimeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint of the other model kind for the comparison row.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CayleyArgs {
    #[arg(long, conflicts_with = "nodes", required_unless_present = "nodes")]
    n: Option<u32>,
    /// Pick the smallest modulus whose graph covers this many nodes.
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// JSON array of equilibrium states, each a flat array, zero state excluded.
    #[arg(long)]
    dear: PathBuf,
    /// JSON array of teacher states in the same layout.
    #[arg(long)]
    teacher: PathBuf,
}

fn parse_sizes(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("bad size `{x}`: {e}"));
    let range = match s.split_once('-') {
        Some((lo, hi)) => parse(lo)?..=parse(hi)?,
        None => {
            let v = parse(s)?;
            v..=v
        }
    };
    if range.is_empty() {
        return Err(format!("empty size range `{s}`"));
    }
    Ok(range)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Time(a) => time(a, out),
        Command::Cayley(a) => cayley(a, out),
        Command::AlignDebug(a) => align_debug(a, out),
    }
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(name) = &a.profile {
        let profile = Profile::by_name(name)?;
        let paths = profile.write_datasets(a.algorithm, a.seed, &a.out)?;
        for p in std::iter::once(&paths.train).chain([&paths.valid]).chain(&paths.test) {
            emit(out, p.display())?;
        }
        // The config sits next to the data and names it relatively.
        let file_name = |p: &Path| PathBuf::from(p.file_name().expect("dataset file name"));
        let relative = DataPaths {
            train: file_name(&paths.train),
            valid: file_name(&paths.valid),
            test: paths.test.iter().map(|p| file_name(p)).collect(),
        };
        let mut run = profile.run_config(
            a.algorithm,
            ModelKind::Dear,
            relative,
            PathBuf::from(format!("runs/{}", a.algorithm.name())),
        );
        run.seed = a.seed;
        let cfg_path = a.out.join(format!("{}.toml", a.algorithm.name()));
        fs::write(&cfg_path, run.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        return emit(out, cfg_path.display());
    }
    let spec = DatasetSpec {
        algorithm: a.algorithm,
        split: a.split,
        count: a.count.expect("clap requires count without profile"),
        sizes: a.sizes,
        p_grid: P_GRID.to_vec(),
        seed: a.seed,
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join(format!("{}_{}.jsonl", a.algorithm.name(), a.split.name()));
    write_dataset(&make_dataset(&spec)?, &path)?;
    emit(out, path.display())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut run = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        run.seed = seed;
    }
    if let Some(dir) = a.out {
        run.out_dir = dir;
    }
    run.deterministic |= a.deterministic;
    let outcome = train_run(&run)?;
    emit(
        out,
        format_args!(
            "best epoch {} valid task loss {:.6}",
            outcome.best.epoch,
            outcome.best.valid_task_loss.unwrap_or(f64::NAN)
        ),
    )?;
    for f in [METRICS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT] {
        emit(out, run.out_dir.join(f).display())?;
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut ckpt = Checkpoint::load(&a.checkpoint)?;
    if let Some(path) = &a.config {
        let run = RunConfig::load(path)?;
        if run.algorithm != ckpt.params.algorithm || run.model_config() != ckpt.params.config {
            return Err(Error::contract("config does not match the checkpoint's model"));
        }
        ckpt.run = run;
    }
    if let Some(seed) = a.seed {
        ckpt.run.seed = seed;
    }
    let mut reports = Vec::new();
    for path in &a.data {
        let ds = read_dataset(path)?;
        let r = evaluate_run(&ckpt, &ds)?;
        emit(
            out,
            format_args!(
                "{}: accuracy {:.4} task_loss {:.6} steps mean {:.2} max {} converged {:.3}",
                path.display(),
                r.accuracy,
                r.task_loss,
                r.steps_mean,
                r.steps_max,
                r.converged_fraction
            ),
        )?;
        reports.push(serde_json::json!({ "data": path, "report": r }));
    }
    if let Some(path) = a.out {
        let text = serde_json::to_string_pretty(&reports).map_err(|e| Error::contract(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn time(a: TimeArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let baseline = a.baseline.as_deref().map(Checkpoint::load).transpose()?;
    let ds = read_dataset(&a.data)?;
    let rows = time_run(&ckpt, &ds, baseline.as_ref())?;
    emit(out, "model,seconds_per_sample,steps_mean,steps_max")?;
    for r in rows {
        emit(
            out,
            format_args!(
                "{},{:.6e},{:.3},{}",
                r.model.name(),
                r.seconds_per_sample,
                r.steps_mean,
                r.steps_max
            ),
        )?;
    }
    Ok(())
}

fn cayley(a: CayleyArgs, out: &mut dyn Write) -> Result<()> {
    let n = match (a.n, a.nodes) {
        (Some(n), _) => n,
        (None, Some(nodes)) => choose_n(nodes)?,
        (None, None) => unreachable!("clap requires one of --n and --nodes"),
    };
    let g = cayley_graph(n)?;
    let degrees = g.degrees();
    emit(out, format_args!("n {n}"))?;
    emit(out, format_args!("order {}", g.order()))?;
    emit(out, format_args!("edges {}", g.edges.len()))?;
    emit(
        out,
        format_args!(
            "degree {}..{}",
            degrees.iter().min().unwrap_or(&0),
            degrees.iter().max().unwrap_or(&0)
        ),
    )?;
    match g.diameter() {
        Some(d) => emit(out, format_args!("diameter {d}")),
        None => emit(out, "diameter disconnected"),
    }
}

fn read_states(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let states: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if states.is_empty() {
        return Err(Error::contract(format!("{}: no states", path.display())));
    }
    Ok(states)
}

fn align_debug(a: AlignArgs, out: &mut dyn Write) -> Result<()> {
    let xs = read_states(&a.dear)?;
    let gs = read_states(&a.teacher)?;
    let width = xs[0].len();
    if xs.iter().chain(&gs).any(|s| s.len() != width) {
        return Err(Error::contract("all states must have the same length"));
    }
    let dist = |i: usize, j: usize| -> f64 {
        xs[i].iter().zip(&gs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let (t, t_g) = (xs.len(), gs.len());
    let d: Vec<Vec<f64>> = (0..t - 1).map(|i| (0..t_g - 1).map(|j| dist(i, j)).collect()).collect();
    let rec = Recurrence::for_shape(d.len(), t_g - 1);
    emit(out, format_args!("T {t} T_G {t_g} recurrence {rec:?}"))?;
    if !d.is_empty() && t_g > 1 {
        for row in dp_table(&d, rec) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:10.4}")).collect();
            emit(out, cells.join(" "))?;
        }
        emit(out, format_args!("pairs {:?}", align(&d).pairs))?;
    }
    let p = plan(t, t_g, &dist, None);
    emit(out, format_args!("last distance {:.6}", dist(t - 1, t_g - 1)))?;
    emit(out, format_args!("loss {:.6}", p.value))
}
