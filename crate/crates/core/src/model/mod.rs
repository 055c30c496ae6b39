//! Encode-process-decode network.
//!
//! All functions here record onto a caller-owned [`Tape`]; evaluation without
//! gradients binds parameters as constants and truncates the tape afterwards.

mod decode;
mod encode;
mod graph;
mod norm;
mod processor;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::tasks::{Algorithm, DType, Location};

pub use decode::{
    cyclic_predecessors, decode, f1, instance_score, output_scores, predicted_values,
    sinkhorn_log, sinkhorn_permute, task_loss, PredKind, Prediction, Predictions, SINKHORN_KNEE,
    SINKHORN_SLOPE,
};
pub use encode::{encode, Encoded};
pub use graph::{GraphView, Pass, TripletIndex};
pub use norm::{normalize, random_features, LAYER_NORM_EPS};
pub use processor::{prepare, step, StepStatic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessorKind {
    Pgn,
    Triplet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    LayerNorm,
    /// Layer norm with per-node scale and shift predicted from the node
    /// state, a random node feature and a mean-pooled graph context.
    GranolaLike,
}

/// How Cayley edges enter a processor step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgpSchedule {
    /// One pass over base edges, then one over Cayley edges.
    Sequential,
    /// A single pass over the union.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub processor: ProcessorKind,
    pub norm: NormKind,
    pub cgp: bool,
    pub cgp_schedule: CgpSchedule,
    /// Largest node count for which dense triplets are materialised.
    pub triplet_max_nodes: usize,
    pub granola_random_dim: usize,
    pub gate_bias_init: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 128,
            processor: ProcessorKind::Pgn,
            norm: NormKind::LayerNorm,
            cgp: false,
            cgp_schedule: CgpSchedule::Sequential,
            triplet_max_nodes: 64,
            granola_random_dim: 8,
            gate_bias_init: -3.0,
            sinkhorn_iters: 10,
            sinkhorn_temperature: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.sinkhorn_iters == 0 || !(self.sinkhorn_temperature > 0.0) {
            return Err(Error::Config("sinkhorn needs iters >= 1 and temperature > 0".into()));
        }
        if self.norm == NormKind::GranolaLike && self.granola_random_dim == 0 {
            return Err(Error::Config("granola_random_dim must be positive".into()));
        }
        Ok(())
    }
}

enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Normal with standard deviation `1/sqrt(fan_in)`.
    Fan,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub algorithm: Algorithm,
    names: Arc<[String]>,
    index: Arc<HashMap<String, usize>>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Randomly initialised parameters; deterministic in `seed`.
    pub fn init(config: &ModelConfig, algorithm: Algorithm, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = layout(config, algorithm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape, init) in layout {
            let len: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; len],
                Init::Ones => vec![1.0; len],
                Init::Const(c) => vec![c; len],
                Init::Fan => {
                    let std = 1.0 / (shape[0] as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    (0..len).map(|_| normal.sample(&mut rng)).collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self::assemble(config.clone(), algorithm, names, tensors))
    }

    fn assemble(
        config: ModelConfig,
        algorithm: Algorithm,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        ModelParams {
            config,
            algorithm,
            names: names.into(),
            index: Arc::new(index),
            tensors,
        }
    }

    /// Rebuilds parameters from stored arrays, checking names and shapes
    /// against the layout implied by `config` and `algorithm`.
    pub fn from_named(
        config: &ModelConfig,
        algorithm: Algorithm,
        arrays: &HashMap<String, Tensor>,
    ) -> Result<Self> {
        let template = ModelParams::init(config, algorithm, 0)?;
        let mut tensors = Vec::with_capacity(template.len());
        for (name, t) in template.iter() {
            let stored = arrays
                .get(name)
                .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
            if stored.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    lhs: t.shape().to_vec(),
                    rhs: stored.shape().to_vec(),
                });
            }
            tensors.push(stored.clone());
        }
        Ok(template.with_tensors(tensors))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    /// Same layout with new values, e.g. after an optimiser step.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Self {
        assert_eq!(tensors.len(), self.tensors.len(), "parameter count changed");
        ModelParams {
            config: self.config.clone(),
            algorithm: self.algorithm,
            names: Arc::clone(&self.names),
            index: Arc::clone(&self.index),
            tensors,
        }
    }

    /// Replaces one tensor in place.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if value.shape() != self.tensors[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "set parameter",
                lhs: self.tensors[i].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        Bound {
            vars,
            index: Arc::clone(&self.index),
            config: self.config.clone(),
            algorithm: self.algorithm,
        }
    }
}

/// Parameters recorded on one tape.
pub struct Bound {
    vars: Vec<Var>,
    index: Arc<HashMap<String, usize>>,
    pub config: ModelConfig,
    pub algorithm: Algorithm,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    /// Vars in parameter order, for collecting gradients.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Routes one parameter through `var` instead, e.g. a probe for a
    /// finite-difference check.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        self.vars[i] = var;
        Ok(())
    }
}

fn layout(cfg: &ModelConfig, algorithm: Algorithm) -> Result<Vec<(String, Vec<usize>, Init)>> {
    let d = cfg.latent_dim;
    let z = 2 * d;
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    for spec in algorithm.input_specs() {
        add(format!("enc.{}.w", spec.name), vec![spec.dtype.width(), d], Init::Fan);
        add(format!("enc.{}.b", spec.name), vec![d], Init::Zeros);
    }
    if cfg.cgp {
        add("enc.edge_type".into(), vec![2, d], Init::Fan);
    }

    let mlp = |add: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, inputs: &[&str], b2: Init| {
        for i in inputs {
            add(format!("{p}.{i}"), vec![d, d], Init::Fan);
        }
        add(format!("{p}.b1"), vec![d], Init::Zeros);
        add(format!("{p}.w2"), vec![d, d], Init::Fan);
        add(format!("{p}.b2"), vec![d], b2);
    };
    mlp(
        &mut add,
        "proc.msg",
        &["w_src", "u_src", "w_dst", "u_dst", "w_edge"],
        Init::Zeros,
    );
    mlp(&mut add, "proc.upd", &["w_h", "w_u", "w_agg"], Init::Zeros);
    mlp(
        &mut add,
        "proc.gate",
        &["w_h", "w_u", "w_agg"],
        Init::Const(cfg.gate_bias_init),
    );
    if cfg.processor == ProcessorKind::Triplet {
        mlp(
            &mut add,
            "proc.tri",
            &["w_u", "w_v", "w_w", "w_euv", "w_evw"],
            Init::Zeros,
        );
        add("proc.tri.w_out".into(), vec![d, d], Init::Fan);
    }
    match cfg.norm {
        NormKind::None => {}
        NormKind::LayerNorm | NormKind::GranolaLike => {
            add("norm.gamma".into(), vec![d], Init::Ones);
            add("norm.beta".into(), vec![d], Init::Zeros);
        }
    }
    if cfg.norm == NormKind::GranolaLike {
        add("norm.gran.w_h".into(), vec![d, d], Init::Fan);
        add("norm.gran.w_r".into(), vec![cfg.granola_random_dim, d], Init::Fan);
        add("norm.gran.w_ctx".into(), vec![d, d], Init::Fan);
        add("norm.gran.b1".into(), vec![d], Init::Zeros);
        add("norm.gran.w_gamma".into(), vec![d, d], Init::Zeros);
        add("norm.gran.b_gamma".into(), vec![d], Init::Zeros);
        add("norm.gran.w_beta".into(), vec![d, d], Init::Zeros);
        add("norm.gran.b_beta".into(), vec![d], Init::Zeros);
    }

    for spec in algorithm.output_specs() {
        let p = format!("dec.{}", spec.name);
        match (spec.location, spec.dtype) {
            (Location::Node, DType::Scalar | DType::Mask | DType::MaskOne) => {
                add(format!("{p}.w"), vec![z, 1], Init::Fan);
                add(format!("{p}.b"), vec![1], Init::Zeros);
            }
            (Location::Node, DType::Categorical(k)) => {
                add(format!("{p}.w"), vec![z, k], Init::Fan);
                add(format!("{p}.b"), vec![k], Init::Zeros);
            }
            (Location::Node, DType::Pointer | DType::PermutationPointer) => {
                add(format!("{p}.w_src"), vec![z, d], Init::Fan);
                add(format!("{p}.w_dst"), vec![z, d], Init::Fan);
                add(format!("{p}.w_edge"), vec![d, d], Init::Fan);
                add(format!("{p}.b1"), vec![d], Init::Zeros);
                add(format!("{p}.w2"), vec![d, 1], Init::Fan);
                if spec.dtype == DType::PermutationPointer {
                    add(format!("{p}.head_w"), vec![z, 1], Init::Fan);
                    add(format!("{p}.head_b"), vec![1], Init::Zeros);
                }
            }
            (Location::Edge, DType::Pointer) => {
                for w in ["w_i", "w_j", "w_k"] {
                    add(format!("{p}.{w}"), vec![z, d], Init::Fan);
                }
                add(format!("{p}.w_eij"), vec![d, d], Init::Fan);
                add(format!("{p}.w_ekj"), vec![d, d], Init::Fan);
                add(format!("{p}.b1"), vec![d], Init::Zeros);
                add(format!("{p}.w2"), vec![d, 1], Init::Fan);
            }
            (loc, dt) => {
                return Err(Error::Capability(format!(
                    "no decoder for {dt} outputs located at {loc:?}"
                )))
            }
        }
    }
    Ok(out)
}
