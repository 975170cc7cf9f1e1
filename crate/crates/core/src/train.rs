//! Training loop, hyperparameter grid search, λ sweeps, Pareto fronts and
//! test-set evaluation.

use crate::derive_seed;
use crate::encoding::{self, EncodedPrefix, EncoderSpec, EncodingError};
use crate::eventlog::{self, EventLog, EventLogError, RawPrefixSample};
use crate::metrics::{self, EvalReport, MetricError};
use crate::nn::{
    composite_loss, forward, param_gradients, predict, AdamW, AdamWConfig, Architecture,
    BoundParams, CompositeLossConfig, EarlyStopping, ModelParams, NnError, PlateauScheduler,
    StopDecision, Tape, Tensor, MAX_EPOCHS,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("no validation samples")]
    EmptyValidationSet,
    #[error(transparent)]
    EventLog(#[from] EventLogError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("every grid cell failed to train")]
    NoUsableCell,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn default_target() -> String {
    "Make Job Offer".to_string()
}
fn default_sensitive() -> String {
    "case:protected".to_string()
}
fn default_max_len() -> usize {
    6
}
fn default_fraction() -> f64 {
    0.2
}

/// How a log is turned into encoded train/validation/test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    #[serde(default = "default_target")]
    pub target_activity: String,
    #[serde(default = "default_sensitive")]
    pub sensitive_attr: String,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub drop_sensitive: bool,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_fraction")]
    pub valid_fraction: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            target_activity: default_target(),
            sensitive_attr: default_sensitive(),
            max_len: default_max_len(),
            drop_sensitive: false,
            test_fraction: default_fraction(),
            valid_fraction: default_fraction(),
        }
    }
}

/// Group statistics of one split: prefix count, % positive, % in S1, and
/// the positive rates (in %) of S0 and S1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub prefixes: usize,
    pub pct_positive: f64,
    pub pct_s1: f64,
    pub pct_s0_positive: f64,
    pub pct_s1_positive: f64,
}

impl SplitSummary {
    pub fn of(samples: &[EncodedPrefix]) -> SplitSummary {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                f64::NAN
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        let n = samples.len();
        let pos = samples.iter().filter(|s| s.outcome == 1).count();
        let s1 = samples.iter().filter(|s| s.sensitive == 1).count();
        let s1_pos = samples
            .iter()
            .filter(|s| s.sensitive == 1 && s.outcome == 1)
            .count();
        SplitSummary {
            prefixes: n,
            pct_positive: pct(pos, n),
            pct_s1: pct(s1, n),
            pct_s0_positive: pct(pos - s1_pos, n - s1),
            pct_s1_positive: pct(s1_pos, s1),
        }
    }
}

/// Encoded splits plus the encoder fitted on the training portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub encoder: EncoderSpec,
    pub train: Vec<EncodedPrefix>,
    pub valid: Vec<EncodedPrefix>,
    pub test: Vec<EncodedPrefix>,
}

/// Case-level train/test split, prefix extraction, sample-level validation
/// split and encoder fitting on the training samples only.
pub fn prepare_dataset(log: &EventLog, cfg: &PrepareConfig, seed: u64) -> Result<Prepared> {
    let (train_log, test_log) = eventlog::split_cases(log, cfg.test_fraction, derive_seed(seed, 1))?;
    let extract = |l: &EventLog| -> Result<Vec<RawPrefixSample>> {
        Ok(eventlog::extract_prefixes(
            l,
            &cfg.target_activity,
            &cfg.sensitive_attr,
            cfg.max_len,
        )?)
    };
    let train_raw = extract(&train_log)?;
    let test_raw = extract(&test_log)?;
    let (train_raw, valid_raw) =
        eventlog::validation_split(&train_raw, cfg.valid_fraction, derive_seed(seed, 2))?;
    let encoder = encoding::fit_encoder(
        &train_raw,
        &log.schema,
        cfg.max_len,
        cfg.drop_sensitive,
        &cfg.sensitive_attr,
    )?;
    Ok(Prepared {
        train: encoding::encode_all(&encoder, &train_raw),
        valid: encoding::encode_all(&encoder, &valid_raw),
        test: encoding::encode_all(&encoder, &test_raw),
        encoder,
    })
}

/// One hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub layers: usize,
    pub bidirectional: bool,
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            layers: 1,
            bidirectional: false,
            hidden: 16,
            batch_size: 128,
            lr: 1e-3,
            dropout: 0.2,
        }
    }
}

impl Hyper {
    pub fn architecture(&self, encoder: &EncoderSpec) -> Architecture {
        Architecture::for_encoder(
            encoder,
            self.hidden,
            self.layers,
            self.bidirectional,
            self.dropout,
        )
    }

    /// Preference order among equally scoring cells: fewer layers, smaller
    /// hidden size, lower learning rate, then the remaining fields.
    fn parsimony_cmp(&self, other: &Hyper) -> Ordering {
        self.layers
            .cmp(&other.layers)
            .then(self.hidden.cmp(&other.hidden))
            .then(self.lr.total_cmp(&other.lr))
            .then(self.bidirectional.cmp(&other.bidirectional))
            .then(self.batch_size.cmp(&other.batch_size))
            .then(self.dropout.total_cmp(&other.dropout))
    }
}

/// Cartesian hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub layers: Vec<usize>,
    pub bidirectional: Vec<bool>,
    pub hidden: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub lr: Vec<f64>,
    pub dropout: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            layers: vec![1, 2],
            bidirectional: vec![false, true],
            hidden: vec![16, 32, 64],
            batch_size: vec![128, 256, 512],
            lr: vec![1e-4, 1e-3],
            dropout: vec![0.2, 0.4],
        }
    }
}

impl HyperGrid {
    pub fn single(h: Hyper) -> HyperGrid {
        HyperGrid {
            layers: vec![h.layers],
            bidirectional: vec![h.bidirectional],
            hidden: vec![h.hidden],
            batch_size: vec![h.batch_size],
            lr: vec![h.lr],
            dropout: vec![h.dropout],
        }
    }

    /// All cells, in nested order layers → bidirectional → hidden → batch →
    /// lr → dropout.
    pub fn cells(&self) -> Vec<Hyper> {
        let mut out = Vec::with_capacity(self.len());
        for &layers in &self.layers {
            for &bidirectional in &self.bidirectional {
                for &hidden in &self.hidden {
                    for &batch_size in &self.batch_size {
                        for &lr in &self.lr {
                            for &dropout in &self.dropout {
                                out.push(Hyper {
                                    layers,
                                    bidirectional,
                                    hidden,
                                    batch_size,
                                    lr,
                                    dropout,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.layers.len()
            * self.bidirectional.len()
            * self.hidden.len()
            * self.batch_size.len()
            * self.lr.len()
            * self.dropout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which loss is monitored on the validation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationLoss {
    /// The training objective with the same λ.
    #[default]
    Composite,
    Bce,
}

fn default_patience() -> usize {
    50
}
fn default_max_epochs() -> usize {
    MAX_EPOCHS
}
fn default_ipm_batch() -> usize {
    512
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub loss: CompositeLossConfig,
    #[serde(default)]
    pub adamw: AdamWConfig,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Batch size used whenever λ > 0, regardless of the hyperparameters.
    #[serde(default = "default_ipm_batch")]
    pub ipm_batch_size: usize,
    #[serde(default)]
    pub validation_loss: ValidationLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: CompositeLossConfig::default(),
            adamw: AdamWConfig::default(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            ipm_batch_size: default_ipm_batch(),
            validation_loss: ValidationLoss::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_lambda(lambda: f64) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.loss.lambda = lambda;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.patience == 0 || self.max_epochs == 0 || self.ipm_batch_size == 0 {
            return Err(TrainError::Config(
                "patience, max_epochs and ipm_batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_batch_size(&self, hyper: &Hyper) -> usize {
        if self.loss.lambda > 0.0 {
            self.ipm_batch_size
        } else {
            hyper.batch_size
        }
    }
}

/// Counters collected while training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub batches: usize,
    /// Batches where λ > 0 but only one sensitive group was present.
    pub ipm_skipped_batches: usize,
    /// Batches whose Sinkhorn iterations hit the iteration cap.
    pub ipm_unconverged_batches: usize,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Best-validation model snapshot plus everything `evaluate` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub hyper: Hyper,
    pub config: TrainConfig,
    pub effective_batch_size: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    /// True when early stopping triggered before the epoch cap.
    pub early_stopped: bool,
    pub stats: TrainStats,
    pub encoder: EncoderSpec,
    pub params: ModelParams,
    pub valid_scores: Vec<f64>,
    pub valid_labels: Vec<u8>,
    pub valid_sensitive: Vec<u8>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: c.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }

    /// F1-maximising threshold on the stored validation scores.
    pub fn optimal_threshold(&self) -> Result<f64> {
        Ok(metrics::optimal_threshold(
            &self.valid_scores,
            &self.valid_labels,
        )?)
    }
}

fn labels_of(samples: &[EncodedPrefix]) -> (Vec<u8>, Vec<u8>) {
    samples.iter().map(|s| (s.outcome, s.sensitive)).unzip()
}

const EVAL_CHUNK: usize = 1024;

/// Loss on a set of precomputed propensities, without gradient tracking.
fn loss_on_scores(
    scores: &[f64],
    labels: &[u8],
    sensitive: &[u8],
    cfg: &CompositeLossConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::column(scores.to_vec()));
    let parts = composite_loss(&mut tape, p, labels, sensitive, cfg)?;
    Ok(tape.value(parts.total).item())
}

/// Trains one model and returns the snapshot with the lowest validation
/// loss. All randomness derives from `seed`.
pub fn train_model(
    train: &[EncodedPrefix],
    valid: &[EncodedPrefix],
    encoder: &EncoderSpec,
    hyper: &Hyper,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if valid.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    if hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(TrainError::Config("batch size and learning rate must be positive".into()));
    }
    let arch = hyper.architecture(encoder);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut params = ModelParams::init(&arch, &mut init_rng)?;
    let mut best = params.clone();
    let mut opt = AdamW::for_params(cfg.adamw, &params);
    let mut sched = PlateauScheduler::new(hyper.lr);
    let mut stopper = EarlyStopping::with_cap(cfg.patience, cfg.max_epochs);
    let batch_size = cfg.effective_batch_size(hyper);
    let val_cfg = match cfg.validation_loss {
        ValidationLoss::Composite => cfg.loss,
        ValidationLoss::Bce => CompositeLossConfig {
            lambda: 0.0,
            ..cfg.loss
        },
    };
    let (valid_labels, valid_sensitive) = labels_of(valid);
    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    loop {
        let epoch = stopper.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let lr = sched.lr;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&EncodedPrefix> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<u8> = batch.iter().map(|s| s.outcome).collect();
            let groups: Vec<u8> = batch.iter().map(|s| s.sensitive).collect();
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params);
            let p = forward(&mut tape, &params, &bound, &batch, true, &mut rng)?;
            let parts = composite_loss(&mut tape, p, &labels, &groups, &cfg.loss)?;
            if !tape.value(parts.total).item().is_finite() {
                return Err(TrainError::Diverged { epoch: epoch + 1 });
            }
            stats.batches += 1;
            stats.ipm_skipped_batches += usize::from(parts.ipm_skipped);
            stats.ipm_unconverged_batches += usize::from(!parts.ipm_converged);
            let grads = param_gradients(&tape, parts.total, &bound);
            opt.step_params(&mut params, &grads, lr);
        }

        let scores = predict(&params, valid, EVAL_CHUNK)?;
        let val_loss = loss_on_scores(&scores, &valid_labels, &valid_sensitive, &val_cfg)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch: epoch + 1 });
        }
        sched.step(val_loss);
        let decision = stopper.check(val_loss);
        if stopper.improved_last() {
            best = params.clone();
        }
        log::debug!(
            "epoch {} valid loss {val_loss:.6} lr {:.2e}",
            stopper.epoch,
            sched.lr
        );
        if decision == StopDecision::Stop {
            break;
        }
    }
    if stats.ipm_skipped_batches > 0 {
        log::warn!(
            "{} batches lacked one sensitive group; distance term was inactive there",
            stats.ipm_skipped_batches
        );
    }

    let valid_scores = predict(&best, valid, EVAL_CHUNK)?;
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        seed,
        hyper: *hyper,
        config: *cfg,
        effective_batch_size: batch_size,
        epochs_run: stopper.epoch,
        best_epoch: stopper.best_epoch,
        best_valid_loss: stopper.best.unwrap_or(f64::NAN),
        early_stopped: stopper.epoch < cfg.max_epochs,
        stats,
        encoder: encoder.clone(),
        params: best,
        valid_scores,
        valid_labels,
        valid_sensitive,
    })
}

/// Propensities of a checkpoint's model in evaluation mode.
pub fn score(ckpt: &Checkpoint, samples: &[EncodedPrefix]) -> Result<Vec<f64>> {
    Ok(predict(&ckpt.params, samples, EVAL_CHUNK)?)
}

/// Test-set report. The tuned threshold comes from the validation scores
/// stored in the checkpoint.
pub fn evaluate(ckpt: &Checkpoint, test: &[EncodedPrefix]) -> Result<EvalReport> {
    let scores = score(ckpt, test)?;
    let (labels, sensitive) = labels_of(test);
    let t = ckpt.optimal_threshold()?;
    Ok(EvalReport::compute(&scores, &labels, &sensitive, t)?)
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub hyper: Hyper,
    pub valid_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Hyper,
    pub best_index: usize,
    pub cells: Vec<CellResult>,
}

/// Index of the preferred cell: highest score, then [`Hyper::parsimony_cmp`],
/// then lowest index. Only comparisons of scores are used.
pub fn select_best(cells: &[(Hyper, f64)]) -> Option<usize> {
    (0..cells.len())
        .filter(|&i| cells[i].1.is_finite())
        .min_by(|&i, &j| {
            cells[j]
                .1
                .total_cmp(&cells[i].1)
                .then_with(|| cells[i].0.parsimony_cmp(&cells[j].0))
                .then(i.cmp(&j))
        })
}

/// Grid search with BCE-only training and patience 20; cells are ranked by
/// validation AUC.
pub fn grid_search(
    train: &[EncodedPrefix],
    valid: &[EncodedPrefix],
    encoder: &EncoderSpec,
    grid: &HyperGrid,
    base: &TrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<GridResult> {
    let (labels, _) = labels_of(valid);
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(MetricError::Undefined {
            metric: "auc",
            reason: "validation set lacks one outcome class".into(),
        }
        .into());
    }
    let cfg = TrainConfig {
        loss: CompositeLossConfig {
            lambda: 0.0,
            ..base.loss
        },
        patience: 20,
        ..*base
    };
    let cells = grid.cells();
    let results: Vec<CellResult> = with_pool(jobs, || {
        cells
            .par_iter()
            .enumerate()
            .map(|(index, hyper)| {
                let run = train_model(train, valid, encoder, hyper, &cfg, derive_seed(seed, index as u64))
                    .and_then(|ck| Ok(metrics::auc(&ck.valid_scores, &ck.valid_labels)?));
                match run {
                    Ok(a) => CellResult {
                        index,
                        hyper: *hyper,
                        valid_auc: Some(a),
                        error: None,
                    },
                    Err(e) => CellResult {
                        index,
                        hyper: *hyper,
                        valid_auc: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let scored: Vec<(Hyper, f64)> = results
        .iter()
        .map(|c| (c.hyper, c.valid_auc.unwrap_or(f64::NAN)))
        .collect();
    let best_index = select_best(&scored).ok_or(TrainError::NoUsableCell)?;
    Ok(GridResult {
        best: results[best_index].hyper,
        best_index,
        cells: results,
    })
}

/// λ ∈ {0, 0.05, …, 0.5}.
pub fn default_lambdas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 20.0).collect()
}

/// Result of one λ of a sweep. Failed runs carry NaN metrics and an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub auc: f64,
    pub abpc: f64,
    pub abcc: f64,
    pub seed: u64,
    /// Training ended by early stopping (not the epoch cap) without error.
    pub converged: bool,
    #[serde(default)]
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.auc.is_finite() && self.abpc.is_finite() && self.abcc.is_finite()
    }

    pub fn fairness(&self, key: FairnessKey) -> f64 {
        match key {
            FairnessKey::Abpc => self.abpc,
            FairnessKey::Abcc => self.abcc,
        }
    }
}

/// One training run plus test evaluation per λ, all from the same seed.
#[allow(clippy::too_many_arguments)]
pub fn lambda_sweep(
    train: &[EncodedPrefix],
    valid: &[EncodedPrefix],
    test: &[EncodedPrefix],
    encoder: &EncoderSpec,
    hyper: &Hyper,
    base: &TrainConfig,
    lambdas: &[f64],
    seed: u64,
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() {
        return Err(TrainError::Config("empty lambda list".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(TrainError::Config(format!("lambda {l} outside [0, 1]")));
    }
    let mut points: Vec<SweepPoint> = with_pool(jobs, || {
        lambdas
            .par_iter()
            .map(|&lambda| {
                let cfg = TrainConfig {
                    loss: CompositeLossConfig {
                        lambda,
                        ..base.loss
                    },
                    ..*base
                };
                let run = train_model(train, valid, encoder, hyper, &cfg, seed)
                    .and_then(|ck| Ok((evaluate(&ck, test)?, ck.early_stopped)));
                match run {
                    Ok((r, converged)) => SweepPoint {
                        lambda,
                        auc: r.auc,
                        abpc: r.abpc,
                        abcc: r.abcc,
                        seed,
                        converged,
                        error: None,
                    },
                    Err(e) => SweepPoint {
                        lambda,
                        auc: f64::NAN,
                        abpc: f64::NAN,
                        abcc: f64::NAN,
                        seed,
                        converged: false,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessKey {
    Abpc,
    Abcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub key: FairnessKey,
    pub points: Vec<SweepPoint>,
}

/// Indices of the non-dominated points (maximise AUC, minimise fairness).
/// Failed points are ignored; among exact duplicates only the lowest λ is
/// kept. Sorted by AUC descending.
pub fn pareto_indices(points: &[SweepPoint], key: FairnessKey) -> Vec<usize> {
    let ok: Vec<usize> = (0..points.len()).filter(|&i| points[i].ok()).collect();
    let dominated = |p: &SweepPoint| {
        ok.iter().any(|&j| {
            let q = &points[j];
            let (qa, qf, pa, pf) = (q.auc, q.fairness(key), p.auc, p.fairness(key));
            qa >= pa && qf <= pf && (qa > pa || qf < pf)
        })
    };
    let mut front: Vec<usize> = ok
        .iter()
        .copied()
        .filter(|&i| !dominated(&points[i]))
        .collect();
    front.sort_by(|&i, &j| {
        let (p, q) = (&points[i], &points[j]);
        q.auc
            .total_cmp(&p.auc)
            .then(p.fairness(key).total_cmp(&q.fairness(key)))
            .then(p.lambda.total_cmp(&q.lambda))
            .then(i.cmp(&j))
    });
    front.dedup_by(|later, earlier| {
        let (p, q) = (&points[*later], &points[*earlier]);
        p.auc == q.auc && p.fairness(key) == q.fairness(key)
    });
    front
}

pub fn pareto_front(points: &[SweepPoint], key: FairnessKey) -> ParetoFront {
    ParetoFront {
        key,
        points: pareto_indices(points, key)
            .into_iter()
            .map(|i| points[i].clone())
            .collect(),
    }
}

/// Sweep table with Pareto membership for both fairness metrics. The last
/// column carries the configuration hash of the run.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], config_hash: &str, w: W) -> Result<()> {
    let on = |key| {
        let mut flags = vec![false; points.len()];
        for i in pareto_indices(points, key) {
            flags[i] = true;
        }
        flags
    };
    let (abpc_front, abcc_front) = (on(FairnessKey::Abpc), on(FairnessKey::Abcc));
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "lambda",
        "auc",
        "abpc",
        "abcc",
        "on_pareto_abpc",
        "on_pareto_abcc",
        "seed",
        "converged",
        "config_hash",
    ])
    .map_err(csv_err)?;
    for (i, p) in points.iter().enumerate() {
        out.write_record([
            p.lambda.to_string(),
            p.auc.to_string(),
            p.abpc.to_string(),
            p.abcc.to_string(),
            abpc_front[i].to_string(),
            abcc_front[i].to_string(),
            p.seed.to_string(),
            p.converged.to_string(),
            config_hash.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One labelled evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub seed: u64,
    pub config_hash: String,
    pub report: EvalReport,
}

/// Evaluation table: `run, <11 report fields>, seed, config_hash`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["run"];
    header.extend(EvalReport::FIELDS);
    header.extend(["seed", "config_hash"]);
    out.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![row.run.clone()];
        rec.extend(row.report.values().iter().map(|v| v.to_string()));
        rec.push(row.seed.to_string());
        rec.push(row.config_hash.clone());
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> TrainError {
    TrainError::Io(std::io::Error::other(e))
}
