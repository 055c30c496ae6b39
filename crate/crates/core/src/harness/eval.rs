use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::{ModelKind, RunConfig};
use crate::dear::{evaluate_dear, evaluate_unrolled, EvalOutcome};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tasks::{Dataset, GraphInstance};

/// Aggregate evaluation of one model over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub instances: usize,
    pub task_loss: f64,
    pub accuracy: f64,
    pub per_output: Vec<(String, f64)>,
    pub steps_mean: f64,
    pub steps_max: usize,
    pub converged_fraction: f64,
    /// Largest relative change under one more processor step among
    /// converged instances.
    pub max_stability: f64,
    /// Wall-clock inference time per instance, excluding data loading.
    pub seconds_per_sample: f64,
}

/// RNG seed for an instance derived from its content, so results do not
/// depend on where the instance sits in a dataset.
pub fn instance_seed(seed: u64, instance: &GraphInstance) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    instance.n.hash(&mut h);
    instance.edges.hash(&mut h);
    for (name, f) in &instance.features {
        name.hash(&mut h);
        for v in &f.values {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn evaluate_one(
    params: &ModelParams,
    run: &RunConfig,
    kind: ModelKind,
    instance: &GraphInstance,
) -> Result<EvalOutcome> {
    if instance.algorithm != params.algorithm {
        return Err(Error::contract(format!(
            "model trained for {} cannot evaluate {} instances",
            params.algorithm, instance.algorithm
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(run.seed, instance));
    match kind {
        ModelKind::Dear => evaluate_dear(params, instance, &run.equilibrium(), &mut rng),
        ModelKind::NarUnrolled => {
            let steps = match run.unrolled_test_steps {
                Some(s) => s,
                None => instance.ground_truth_steps()?,
            };
            evaluate_unrolled(params, instance, steps, &mut rng)
        }
    }
}

pub fn evaluate_params(
    params: &ModelParams,
    run: &RunConfig,
    kind: ModelKind,
    instances: &[GraphInstance],
) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let mut outcomes = Vec::with_capacity(instances.len());
    let start = Instant::now();
    for (i, inst) in instances.iter().enumerate() {
        let out = evaluate_one(params, run, kind, inst).map_err(|e| Error::Instance {
            instance: i,
            source: Box::new(e),
        })?;
        outcomes.push(out);
    }
    let seconds = start.elapsed().as_secs_f64();
    let n = outcomes.len();

    let mut per_output = Vec::new();
    for (k, (name, _)) in outcomes[0].output_scores.iter().enumerate() {
        let mut v: Vec<f64> = outcomes.iter().map(|o| o.output_scores[k].1).collect();
        per_output.push((name.clone(), mean(&mut v)));
    }
    let collect = |f: &dyn Fn(&EvalOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(f).collect() };
    let converged = outcomes.iter().filter(|o| o.converged).count();
    Ok(EvalReport {
        model: kind,
        instances: n,
        task_loss: mean(&mut collect(&|o| o.task_loss)),
        accuracy: mean(&mut collect(&|o| o.score)),
        per_output,
        steps_mean: mean(&mut collect(&|o| o.steps as f64)),
        steps_max: outcomes.iter().map(|o| o.steps).max().unwrap_or(0),
        converged_fraction: converged as f64 / n as f64,
        max_stability: outcomes
            .iter()
            .filter(|o| o.converged)
            .map(|o| o.stability)
            .fold(0.0, f64::max),
        seconds_per_sample: seconds / n as f64,
    })
}

/// Evaluates a checkpoint with its own run settings.
pub fn evaluate_run(ckpt: &Checkpoint, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.algorithm != ckpt.params.algorithm {
        return Err(Error::contract(format!(
            "checkpoint is for {}, dataset is {}",
            ckpt.params.algorithm, dataset.algorithm
        )));
    }
    evaluate_params(&ckpt.params, &ckpt.run, ckpt.run.model, &dataset.instances)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub model: ModelKind,
    pub seconds_per_sample: f64,
    pub steps_mean: f64,
    pub steps_max: usize,
}

/// One timing row per model kind. The checkpoint supplies its own kind; the
/// other kind uses `other` when given and the same parameters otherwise.
/// The unrolled row always runs for the ground-truth step count.
pub fn time_run(ckpt: &Checkpoint, dataset: &Dataset, other: Option<&Checkpoint>) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for kind in [ModelKind::Dear, ModelKind::NarUnrolled] {
        let source = if kind == ckpt.run.model { ckpt } else { other.unwrap_or(ckpt) };
        let mut run = source.run.clone();
        if kind == ModelKind::NarUnrolled {
            run.unrolled_test_steps = None;
        }
        let r = evaluate_params(&source.params, &run, kind, &dataset.instances)?;
        rows.push(TimingRow {
            model: kind,
            seconds_per_sample: r.seconds_per_sample,
            steps_mean: r.steps_mean,
            steps_max: r.steps_max,
        });
    }
    Ok(rows)
}
