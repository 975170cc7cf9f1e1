//! Run configuration: JSON file plus command-line overrides, validation and
//! the provenance hash.

use crate::error::{CliError, Result};
use fairppm::eventlog::{BiasLevel, BiasSpec, SchemaConfig};
use fairppm::nn::AdamWConfig;
use fairppm::train::{Hyper, HyperGrid, PrepareConfig, TrainConfig, ValidationLoss};
use fairppm::transport::SinkhornConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Either explicit hyperparameters or `"grid"` for a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperChoice {
    Grid(GridWord),
    Explicit(Hyper),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridWord {
    Grid,
}

impl Default for HyperChoice {
    fn default() -> Self {
        HyperChoice::Explicit(Hyper::default())
    }
}

/// λ values `start, start + step, …, stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for SweepRange {
    fn default() -> Self {
        SweepRange {
            start: 0.0,
            stop: 0.5,
            step: 0.05,
        }
    }
}

impl SweepRange {
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        let ok = [self.start, self.stop, self.step].iter().all(|v| v.is_finite())
            && self.step > 0.0
            && self.start <= self.stop;
        if !ok {
            return Err(CliError::config(
                "sweep: need finite start <= stop and step > 0",
            ));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // rounding keeps 3 × 0.05 at 0.15 rather than 0.15000000000000002
        Ok((0..=count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_bias")]
    pub bias: BiasLevel,
    #[serde(default = "default_cases")]
    pub cases: usize,
    /// Full generator parameters; overrides `bias` and `cases`.
    #[serde(default)]
    pub spec: Option<BiasSpec>,
}

fn default_bias() -> BiasLevel {
    BiasLevel::High
}
fn default_cases() -> usize {
    2000
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            bias: default_bias(),
            cases: default_cases(),
            spec: None,
        }
    }
}

impl SynthConfig {
    pub fn bias_spec(&self) -> BiasSpec {
        self.spec
            .clone()
            .unwrap_or_else(|| BiasSpec::hiring(self.bias, self.cases))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRef {
    pub name: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOptions {
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_ipm_batch")]
    pub ipm_batch_size: usize,
    #[serde(default)]
    pub validation_loss: ValidationLoss,
    #[serde(default)]
    pub adamw: AdamWConfig,
}

fn default_patience() -> usize {
    TrainConfig::default().patience
}
fn default_max_epochs() -> usize {
    TrainConfig::default().max_epochs
}
fn default_ipm_batch() -> usize {
    TrainConfig::default().ipm_batch_size
}

impl Default for TrainingOptions {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainingOptions {
            patience: d.patience,
            max_epochs: d.max_epochs,
            ipm_batch_size: d.ipm_batch_size,
            validation_loss: d.validation_loss,
            adamw: d.adamw,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_seed() -> u64 {
    42
}
fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Event log CSV read by `ingest`.
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// Artifact directory: read and written by every command.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub schema: SchemaConfig,
    #[serde(default = "default_target")]
    pub target_activity: String,
    #[serde(default = "default_sensitive")]
    pub sensitive_attr: String,
    #[serde(default)]
    pub drop_sensitive: bool,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_fraction")]
    pub valid_fraction: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub hyper: HyperChoice,
    /// Cells searched when `hyper` is `"grid"`.
    #[serde(default)]
    pub grid: HyperGrid,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub sweep: SweepRange,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
    #[serde(default)]
    pub training: TrainingOptions,
    #[serde(default)]
    pub synth: SynthConfig,
    /// Runs merged by `report`.
    #[serde(default)]
    pub runs: Vec<RunRef>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_target() -> String {
    PrepareConfig::default().target_activity
}
fn default_sensitive() -> String {
    PrepareConfig::default().sensitive_attr
}
fn default_max_len() -> usize {
    PrepareConfig::default().max_len
}
fn default_fraction() -> f64 {
    PrepareConfig::default().test_fraction
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub drop_sensitive: bool,
    pub max_len: Option<usize>,
    pub jobs: Option<usize>,
    pub sinkhorn_eps: Option<f64>,
    pub sinkhorn_iters: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::config(format!("config: cannot read `{}`: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::config(format!("config `{}`: {e}", p.display()))
                })?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = &ov.log {
            cfg.log = Some(v.clone());
        }
        if let Some(v) = &ov.out {
            cfg.out = v.clone();
        }
        if let Some(v) = ov.seed {
            cfg.seed = v;
        }
        if let Some(v) = ov.lambda {
            cfg.lambda = v;
        }
        if ov.drop_sensitive {
            cfg.drop_sensitive = true;
        }
        if let Some(v) = ov.max_len {
            cfg.max_len = v;
        }
        if let Some(v) = ov.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = ov.sinkhorn_eps {
            cfg.sinkhorn.epsilon = v;
        }
        if let Some(v) = ov.sinkhorn_iters {
            cfg.sinkhorn.max_iters = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not depend on which command runs.
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 1 {
            return Err(CliError::config("max_len: must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CliError::config(format!("lambda: {} outside [0, 1]", self.lambda)));
        }
        for (name, v) in [("test_fraction", self.test_fraction), ("valid_fraction", self.valid_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CliError::config(format!("{name}: {v} outside (0, 1)")));
            }
        }
        if self.jobs == 0 {
            return Err(CliError::config("jobs: must be at least 1"));
        }
        self.sinkhorn
            .validate()
            .map_err(|e| CliError::config(format!("sinkhorn: {e}")))?;
        self.train_config(self.lambda)
            .validate()
            .map_err(|e| CliError::config(format!("training: {e}")))?;
        Ok(())
    }

    /// The log path, which must name an existing file.
    pub fn log_path(&self) -> Result<&Path> {
        let p = self
            .log
            .as_deref()
            .ok_or_else(|| CliError::config("log: no event log given"))?;
        if !p.is_file() {
            return Err(CliError::config(format!("log: file `{}` not found", p.display())));
        }
        Ok(p)
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            target_activity: self.target_activity.clone(),
            sensitive_attr: self.sensitive_attr.clone(),
            max_len: self.max_len,
            drop_sensitive: self.drop_sensitive,
            test_fraction: self.test_fraction,
            valid_fraction: self.valid_fraction,
        }
    }

    pub fn train_config(&self, lambda: f64) -> TrainConfig {
        let mut t = TrainConfig::with_lambda(lambda);
        t.loss.sinkhorn = self.sinkhorn;
        t.adamw = self.training.adamw;
        t.patience = self.training.patience;
        t.max_epochs = self.training.max_epochs;
        t.ipm_batch_size = self.training.ipm_batch_size;
        t.validation_loss = self.training.validation_loss;
        t
    }

    /// SHA-256 over the canonical JSON of every setting that can change a
    /// result. Output locations, `jobs` and run directories are excluded; the
    /// log enters through the digest of its contents.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self).map_err(CliError::internal)?;
        let obj = value.as_object_mut().expect("config serialises to an object");
        for key in ["log", "out", "jobs", "runs"] {
            obj.remove(key);
        }
        if let Some(p) = self.log.as_deref().filter(|p| p.is_file()) {
            let bytes = std::fs::read(p)?;
            obj.insert("log_sha256".into(), hex::encode(Sha256::digest(&bytes)).into());
        }
        if !self.runs.is_empty() {
            let names: Vec<&str> = self.runs.iter().map(|r| r.name.as_str()).collect();
            obj.insert("run_names".into(), names.into());
        }
        // serde_json maps are ordered by key, so this text is canonical
        let text = serde_json::to_string(&value).map_err(CliError::internal)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}
