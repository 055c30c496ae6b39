use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{ModelKind, RunConfig};
use super::eval::evaluate_params;
use super::metrics::{MetricsLog, MetricsRow};
use super::optim::Adam;
use crate::autodiff::Tensor;
use crate::dear::{dear_gradients, teacher_states, unrolled_gradients, GradOutcome};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tasks::{read_dataset, GraphInstance};

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

const SHUFFLE_SALT: u64 = 0x5348_5546;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

fn instance_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Loads the datasets named in `run` and trains, writing the metrics log
/// and checkpoints into `run.out_dir`.
pub fn train_run(run: &RunConfig) -> Result<TrainOutcome> {
    run.validate()?;
    run.check_paths()?;
    let train = read_dataset(&run.data.train)?;
    let valid = read_dataset(&run.data.valid)?;
    for ds in [&train, &valid] {
        if ds.algorithm != run.algorithm {
            return Err(Error::Config(format!(
                "config is for {} but a dataset holds {}",
                run.algorithm, ds.algorithm
            )));
        }
    }
    let teacher = match &run.alignment.teacher {
        Some(path) if run.alignment.weight > 0.0 => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.run.model != ModelKind::NarUnrolled || ckpt.params.algorithm != run.algorithm {
                return Err(Error::Config(format!(
                    "teacher {} must be an unrolled {} model",
                    path.display(),
                    run.algorithm
                )));
            }
            Some(ckpt.params)
        }
        _ => None,
    };
    train_datasets(run, &train.instances, &valid.instances, teacher.as_ref(), Some(&run.out_dir))
}

fn instance_gradients(
    run: &RunConfig,
    params: &ModelParams,
    inst: &GraphInstance,
    teacher: Option<&ModelParams>,
    rng: &mut ChaCha8Rng,
) -> Result<GradOutcome> {
    let gt = inst.ground_truth_steps()?;
    match run.model {
        ModelKind::Dear => {
            let states = match teacher {
                Some(t) => Some(teacher_states(t, inst, gt, rng)?),
                None => None,
            };
            dear_gradients(params, inst, &run.equilibrium(), rng, states.as_deref())
        }
        ModelKind::NarUnrolled => unrolled_gradients(params, inst, gt, rng),
    }
}

/// Trains on in-memory datasets. With `out`, the metrics log and the best and
/// last checkpoints are written there after every epoch, so a divergence
/// leaves the last good state on disk.
pub fn train_datasets(
    run: &RunConfig,
    train: &[GraphInstance],
    valid: &[GraphInstance],
    teacher: Option<&ModelParams>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    run.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut params = ModelParams::init(&run.model_config(), run.algorithm, run.seed)?;
    let mut adam = Adam::new(run.learning_rate, params.tensors());
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(MetricsLog::create(&dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut last: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(run.seed ^ SHUFFLE_SALT);
    let timing = |secs: f64, n: usize| if run.deterministic { 0.0 } else { secs / n as f64 };

    for epoch in 0..run.epochs {
        order.shuffle(&mut shuffle);
        let start = Instant::now();
        let (mut task, mut align, mut jac) = (0.0, 0.0, 0.0);
        let (mut steps_sum, mut steps_max) = (0usize, 0usize);
        for batch in order.chunks(run.batch_size) {
            let mut acc: Vec<Tensor> =
                params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            for &i in batch {
                let mut rng = instance_rng(run.seed, epoch, i);
                let g = instance_gradients(run, &params, &train[i], teacher, &mut rng).map_err(|e| {
                    Error::Instance {
                        instance: i,
                        source: Box::new(e),
                    }
                })?;
                let l = g.losses;
                if !(l.task.is_finite() && l.align.is_finite() && l.jacobian.is_finite())
                    || !g.grads.iter().all(Tensor::all_finite)
                {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("non-finite loss or gradient on instance {i}"),
                    });
                }
                task += l.task;
                align += l.align;
                jac += l.jacobian;
                steps_sum += g.steps;
                steps_max = steps_max.max(g.steps);
                for (a, g) in acc.iter_mut().zip(&g.grads) {
                    *a = a.zip_map(g, |x, y| x + y)?;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let acc: Vec<Tensor> = acc.iter().map(|t| t.scale(scale)).collect();
            params = params.with_tensors(adam.update(params.tensors(), &acc)?);
            if !params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
        }
        let n = train.len();
        let train_row = MetricsRow {
            epoch,
            split: "train".into(),
            task_loss: task / n as f64,
            align_loss: align / n as f64,
            jac_loss: jac / n as f64,
            accuracy: None,
            solver_steps_mean: steps_sum as f64 / n as f64,
            solver_steps_max: steps_max,
            seconds_per_sample: timing(start.elapsed().as_secs_f64(), n),
        };

        let report = evaluate_params(&params, run, run.model, valid)?;
        if !report.task_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        let valid_row = MetricsRow {
            epoch,
            split: "valid".into(),
            task_loss: report.task_loss,
            align_loss: 0.0,
            jac_loss: 0.0,
            accuracy: Some(report.accuracy),
            solver_steps_mean: report.steps_mean,
            solver_steps_max: report.steps_max,
            seconds_per_sample: if run.deterministic { 0.0 } else { report.seconds_per_sample },
        };
        if let Some(log) = log.as_mut() {
            log.push(&train_row)?;
            log.push(&valid_row)?;
        }
        rows.push(train_row);
        rows.push(valid_row);

        let ckpt = Checkpoint {
            run: run.clone(),
            params: params.clone(),
            optimizer: Some(adam.clone()),
            epoch,
            valid_task_loss: Some(report.task_loss),
        };
        let improved = best
            .as_ref()
            .is_none_or(|b| report.task_loss < b.valid_task_loss.unwrap_or(f64::INFINITY));
        if let Some(dir) = out {
            ckpt.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        if improved {
            best = Some(ckpt.clone());
        }
        last = Some(ckpt);
    }
    match (best, last) {
        (Some(best), Some(last)) => Ok(TrainOutcome { rows, best, last }),
        _ => Err(Error::Config("epochs must be >= 1".into())),
    }
}
