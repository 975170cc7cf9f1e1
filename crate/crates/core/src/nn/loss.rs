use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NnError;
use crate::transport::SinkhornConfig;
use serde::{Deserialize, Serialize};

/// Propensities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the
/// cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeLossConfig {
    /// Weight of the distribution-distance term.
    pub lambda: f64,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
}

impl Default for CompositeLossConfig {
    fn default() -> Self {
        CompositeLossConfig {
            lambda: 0.0,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

impl CompositeLossConfig {
    pub fn bce_only() -> Self {
        CompositeLossConfig::default()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(NnError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        self.sinkhorn
            .validate()
            .map_err(|e| NnError::Config(e.to_string()))
    }
}

/// `(1 − λ)·bce + λ·ipm` on plain numbers.
pub fn combine(lambda: f64, bce: f64, ipm: f64) -> f64 {
    (1.0 - lambda) * bce + lambda * ipm
}

/// Mean binary cross-entropy of an `n × 1` propensity column.
pub fn bce_loss(tape: &mut Tape, p: Var, labels: &[u8]) -> Result<Var, NnError> {
    let (n, c) = tape.shape(p);
    if c != 1 || n != labels.len() || n == 0 {
        return Err(NnError::Shape(format!(
            "bce expects {} × 1 propensities, got {n} × {c}",
            labels.len()
        )));
    }
    let y = Tensor::column(labels.iter().map(|&l| f64::from(l)).collect());
    let not_y = y.map(|v| 1.0 - v);
    let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = tape.log(pc);
    let q = tape.affine(pc, -1.0, 1.0);
    let log_q = tape.log(q);
    let y = tape.constant(y);
    let not_y = tape.constant(not_y);
    let pos = tape.mul(y, log_p);
    let neg = tape.mul(not_y, log_q);
    let ll = tape.add(pos, neg);
    let mean = tape.mean(ll);
    Ok(tape.scale(mean, -1.0))
}

/// Composite loss node plus its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub bce: Option<f64>,
    pub ipm: Option<f64>,
    /// False when the Sinkhorn iterations hit `max_iters`.
    pub ipm_converged: bool,
    /// True when λ > 0 but one sensitive group was absent from the batch.
    pub ipm_skipped: bool,
}

/// `(1 − λ)·BCE + λ·W`, where `W` is the Sinkhorn cost between the
/// propensities of the two sensitive groups. λ = 0 skips the distance term
/// and λ = 1 skips the cross-entropy.
pub fn composite_loss(
    tape: &mut Tape,
    p: Var,
    labels: &[u8],
    sensitive: &[u8],
    cfg: &CompositeLossConfig,
) -> Result<LossParts, NnError> {
    cfg.validate()?;
    if sensitive.len() != labels.len() {
        return Err(NnError::Shape("sensitive and label lengths differ".into()));
    }
    let lambda = cfg.lambda;
    let bce = if lambda < 1.0 {
        Some(bce_loss(tape, p, labels)?)
    } else {
        None
    };
    let mut ipm = None;
    let mut converged = true;
    let mut skipped = false;
    if lambda > 0.0 {
        let (g0, g1): (Vec<usize>, Vec<usize>) =
            (0..sensitive.len()).partition(|&i| sensitive[i] == 0);
        if g0.is_empty() || g1.is_empty() {
            skipped = true;
            log::warn!("batch holds a single sensitive group; distance term inactive");
            ipm = Some(tape.constant(Tensor::scalar(0.0)));
        } else {
            let a = tape.select_rows(p, g0);
            let b = tape.select_rows(p, g1);
            let (w, ok) = tape
                .sinkhorn(a, b, &cfg.sinkhorn)
                .map_err(|e| NnError::Numeric(e.to_string()))?;
            converged = ok;
            ipm = Some(w);
        }
    }
    let total = match (bce, ipm) {
        (Some(b), None) => b,
        (None, Some(w)) => w,
        (Some(b), Some(w)) => {
            let b = tape.scale(b, 1.0 - lambda);
            let w = tape.scale(w, lambda);
            tape.add(b, w)
        }
        (None, None) => unreachable!("lambda is in [0, 1]"),
    };
    Ok(LossParts {
        total,
        bce: bce.map(|v| tape.value(v).item()),
        ipm: ipm.map(|v| tape.value(v).item()),
        ipm_converged: converged,
        ipm_skipped: skipped,
    })
}
