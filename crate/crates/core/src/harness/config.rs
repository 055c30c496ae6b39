use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dear::EquilibriumConfig;
use crate::error::{Error, Result};
use crate::fixpoint::SolveConfig;
use crate::model::{CgpSchedule, ModelConfig, NormKind, ProcessorKind};
use crate::tasks::{make_dataset, write_dataset, Algorithm, DatasetSpec, Split, P_GRID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dear,
    NarUnrolled,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dear => "dear",
            ModelKind::NarUnrolled => "nar_unrolled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    #[serde(default)]
    pub test: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentSettings {
    pub weight: f64,
    /// Checkpoint of a trained unrolled model; required when `weight > 0`.
    pub teacher: Option<PathBuf>,
    pub subsample: bool,
}

impl Default for AlignmentSettings {
    fn default() -> Self {
        AlignmentSettings {
            weight: 0.0,
            teacher: None,
            subsample: true,
        }
    }
}

fn default_latent_dim() -> usize {
    128
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    3e-4
}
fn default_epochs() -> usize {
    100
}
fn default_extra_step_prob() -> f64 {
    0.5
}
fn default_gate_bias_init() -> f64 {
    ModelConfig::default().gate_bias_init
}
fn default_jacobian_eps() -> f64 {
    crate::dear::JACOBIAN_EPS
}

/// A complete experiment description, read from TOML. Unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub model: ModelKind,
    #[serde(default = "default_processor")]
    pub processor: ProcessorKind,
    #[serde(default)]
    pub cgp_enabled: bool,
    #[serde(default = "default_cgp_schedule")]
    pub cgp_schedule: CgpSchedule,
    #[serde(default = "default_norm")]
    pub norm: NormKind,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_gate_bias_init")]
    pub gate_bias_init: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Single worker, ordered reductions and no wall-clock values in logs.
    #[serde(default)]
    pub deterministic: bool,
    /// Unrolled step count at evaluation; the ground-truth count when unset.
    #[serde(default)]
    pub unrolled_test_steps: Option<usize>,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub backward_tol: Option<f64>,
    #[serde(default = "default_extra_step_prob")]
    pub extra_step_prob: f64,
    #[serde(default)]
    pub jacobian_weight: f64,
    #[serde(default = "default_jacobian_eps")]
    pub jacobian_eps: f64,
    #[serde(default)]
    pub alignment: AlignmentSettings,
    pub data: DataPaths,
    pub out_dir: PathBuf,
}

fn default_processor() -> ProcessorKind {
    ProcessorKind::Pgn
}
fn default_cgp_schedule() -> CgpSchedule {
    ModelConfig::default().cgp_schedule
}
fn default_norm() -> NormKind {
    ModelConfig::default().norm
}

impl RunConfig {
    /// A config with every optional key at its default.
    pub fn new(algorithm: Algorithm, model: ModelKind, data: DataPaths, out_dir: PathBuf) -> Self {
        RunConfig {
            algorithm,
            model,
            processor: default_processor(),
            cgp_enabled: false,
            cgp_schedule: default_cgp_schedule(),
            norm: default_norm(),
            latent_dim: default_latent_dim(),
            gate_bias_init: default_gate_bias_init(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            seed: 0,
            deterministic: false,
            unrolled_test_steps: None,
            solver: SolveConfig::default(),
            backward_tol: None,
            extra_step_prob: default_extra_step_prob(),
            jacobian_weight: 0.0,
            jacobian_eps: default_jacobian_eps(),
            alignment: AlignmentSettings::default(),
            data,
            out_dir,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths are taken relative to the config file.
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.valid);
        self.data.test.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
        if let Some(t) = self.alignment.teacher.as_mut() {
            fix(t);
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            processor: self.processor,
            norm: self.norm,
            cgp: self.cgp_enabled,
            cgp_schedule: self.cgp_schedule,
            gate_bias_init: self.gate_bias_init,
            ..ModelConfig::default()
        }
    }

    pub fn equilibrium(&self) -> EquilibriumConfig {
        EquilibriumConfig {
            solver: self.solver.clone(),
            backward_tol: self.backward_tol,
            extra_step_prob: self.extra_step_prob,
            alignment_weight: self.alignment.weight,
            jacobian_weight: self.jacobian_weight,
            jacobian_eps: self.jacobian_eps,
            alignment_subsample: self.alignment.subsample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.equilibrium().validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.unrolled_test_steps == Some(0) {
            return Err(Error::Config("unrolled_test_steps must be >= 1".into()));
        }
        if self.alignment.weight > 0.0 {
            if self.model != ModelKind::Dear {
                return Err(Error::Config("alignment applies to the dear model only".into()));
            }
            if self.alignment.teacher.is_none() {
                return Err(Error::Config("alignment.weight > 0 needs alignment.teacher".into()));
            }
        }
        Ok(())
    }

    /// Checks that every referenced input path exists.
    pub fn check_paths(&self) -> Result<()> {
        let mut inputs = vec![&self.data.train, &self.data.valid];
        inputs.extend(self.data.test.iter());
        inputs.extend(self.alignment.teacher.iter());
        for p in inputs {
            if !p.exists() {
                return Err(Error::Config(format!("missing input {}", p.display())));
            }
        }
        Ok(())
    }
}

/// Dataset sizes and training budget for one experiment scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub name: &'static str,
    pub train_sizes: RangeInclusive<usize>,
    pub valid_size: usize,
    /// Out-of-distribution test size.
    pub test_size: usize,
    pub train_count: usize,
    pub valid_count: usize,
    pub test_count: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub jacobian_weight: f64,
}

impl Profile {
    /// Scaled-down setting that trains in minutes on one core.
    pub fn desk() -> Self {
        Profile {
            name: "desk",
            train_sizes: 4..=8,
            valid_size: 8,
            test_size: 16,
            train_count: 2000,
            valid_count: 100,
            test_count: 100,
            epochs: 20,
            latent_dim: 32,
            batch_size: 32,
            jacobian_weight: 0.01,
        }
    }

    /// Full-scale setting; days of compute on a workstation.
    pub fn paper() -> Self {
        Profile {
            name: "paper",
            train_sizes: 8..=16,
            valid_size: 16,
            test_size: 64,
            train_count: 100_000,
            valid_count: 100,
            test_count: 100,
            epochs: 100,
            latent_dim: 128,
            batch_size: 32,
            jacobian_weight: 0.01,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown profile `{name}`"))),
        }
    }

    /// Train, valid, in-distribution test and out-of-distribution test
    /// specifications, each with its own seed.
    pub fn dataset_specs(&self, algorithm: Algorithm, seed: u64) -> [(&'static str, DatasetSpec); 4] {
        let spec = |split, count, sizes: RangeInclusive<usize>, k: u64| DatasetSpec {
            algorithm,
            split,
            count,
            sizes,
            p_grid: P_GRID.to_vec(),
            seed: seed.wrapping_mul(4).wrapping_add(k),
        };
        [
            ("train", spec(Split::Train, self.train_count, self.train_sizes.clone(), 0)),
            ("valid", spec(Split::Valid, self.valid_count, self.valid_size..=self.valid_size, 1)),
            ("test_id", spec(Split::Test, self.test_count, self.train_sizes.clone(), 2)),
            ("test_ood", spec(Split::Test, self.test_count, self.test_size..=self.test_size, 3)),
        ]
    }

    /// Generates and writes all four datasets into `dir` as
    /// `{algorithm}_{name}.jsonl`.
    pub fn write_datasets(&self, algorithm: Algorithm, seed: u64, dir: &Path) -> Result<DataPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (name, spec) in self.dataset_specs(algorithm, seed) {
            let path = dir.join(format!("{}_{name}.jsonl", algorithm.name()));
            write_dataset(&make_dataset(&spec)?, &path)?;
            paths.push(path);
        }
        let mut it = paths.into_iter();
        let train = it.next().expect("four datasets");
        let valid = it.next().expect("four datasets");
        Ok(DataPaths {
            train,
            valid,
            test: it.collect(),
        })
    }

    /// A run config using this profile's budget.
    pub fn run_config(
        &self,
        algorithm: Algorithm,
        model: ModelKind,
        data: DataPaths,
        out_dir: PathBuf,
    ) -> RunConfig {
        RunConfig {
            epochs: self.epochs,
            latent_dim: self.latent_dim,
            batch_size: self.batch_size,
            jacobian_weight: self.jacobian_weight,
            ..RunConfig::new(algorithm, model, data, out_dir)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
algorithm = "minimum"
model = "dear"
out_dir = "out"

[data]
train = "train.jsonl"
valid = "valid.jsonl"
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.latent_dim, 128);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.learning_rate, 3e-4);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.extra_step_prob, 0.5);
        assert!(cfg.data.test.is_empty());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{MINIMAL}\n[solver]\ntolerance = 0.1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
        let text = MINIMAL.replace("model =", "lr = 1.0\nmodel =");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn alignment_needs_teacher() {
        let text = format!("{MINIMAL}\n[alignment]\nweight = 0.5\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
