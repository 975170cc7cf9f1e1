//! Predictive-performance and independence (demographic parity) metrics.
//!
//! The threshold-free metrics integrate over `[0, 1]` with the composite
//! trapezoidal rule on a grid of 10,000 intervals: ABPC uses Gaussian kernel
//! density estimates of the two groups' score distributions, ABCC uses their
//! empirical CDFs (and therefore approximates the 1-D Wasserstein-1 distance).

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Number of integration intervals on `[0, 1]`.
pub const GRID_STEPS: usize = 10_000;
/// Lower bound on the KDE bandwidth.
pub const MIN_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric `{metric}` is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl MetricError {
    pub fn metric(&self) -> Option<&'static str> {
        match self {
            MetricError::Undefined { metric, .. } => Some(metric),
            MetricError::Shape(_) => None,
        }
    }
}

fn undefined(metric: &'static str, reason: impl Into<String>) -> MetricError {
    MetricError::Undefined {
        metric,
        reason: reason.into(),
    }
}

/// Propensities split by sensitive group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedScores {
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
}

impl GroupedScores {
    pub fn new(s0: Vec<f64>, s1: Vec<f64>) -> Self {
        GroupedScores { s0, s1 }
    }

    pub fn from_sensitive(scores: &[f64], sensitive: &[u8]) -> Self {
        let mut g = GroupedScores::new(Vec::new(), Vec::new());
        for (&p, &s) in scores.iter().zip(sensitive) {
            if s == 0 {
                g.s0.push(p);
            } else {
                g.s1.push(p);
            }
        }
        g
    }

    fn require(&self, metric: &'static str) -> Result<(), MetricError> {
        if self.s0.is_empty() {
            return Err(undefined(metric, "group S0 is empty"));
        }
        if self.s1.is_empty() {
            return Err(undefined(metric, "group S1 is empty"));
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn positive_rate(xs: &[f64], t: f64) -> f64 {
    xs.iter().filter(|&&x| x > t).count() as f64 / xs.len() as f64
}

/// |mean(S0) − mean(S1)|.
pub fn delta_dp_c(g: &GroupedScores) -> Result<f64, MetricError> {
    g.require("ddp_c")?;
    Ok((mean(&g.s0) - mean(&g.s1)).abs())
}

/// |P(ŷ > t | S0) − P(ŷ > t | S1)|.
pub fn delta_dp_b(g: &GroupedScores, t: f64) -> Result<f64, MetricError> {
    g.require("ddp_b")?;
    Ok((positive_rate(&g.s0, t) - positive_rate(&g.s1, t)).abs())
}

/// The 10,001-point integration grid `k / 10_000`.
pub fn grid() -> Vec<f64> {
    (0..=GRID_STEPS)
        .map(|k| k as f64 / GRID_STEPS as f64)
        .collect()
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^(−1/5)`, floored at [`MIN_BANDWIDTH`].
/// Falls back to σ alone when the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let m = mean(samples);
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma = var.sqrt();
    let s = sorted(samples);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    (0.9 * spread * (n as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Gaussian KDE evaluated on `grid`. Kernel tails beyond 9 bandwidths
/// (relative weight < 1e-17) are not accumulated.
pub fn kde_pdf(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    if samples.is_empty() || grid.is_empty() {
        return out;
    }
    let h = silverman_bandwidth(samples);
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let reach = 9.0 * h;
    for &x in samples {
        let lo = grid.partition_point(|&g| g < x - reach);
        let hi = grid.partition_point(|&g| g <= x + reach);
        for (o, &g) in out[lo..hi].iter_mut().zip(&grid[lo..hi]) {
            let z = (g - x) / h;
            *o += (-0.5 * z * z).exp();
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    out
}

/// Right-continuous empirical CDF `F(x) = #{s ≤ x} / n` on `grid` (ascending).
pub fn ecdf(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut k = 0;
    grid.iter()
        .map(|&x| {
            while k < s.len() && s[k] <= x {
                k += 1;
            }
            k as f64 / n
        })
        .collect()
}

/// Composite trapezoidal rule.
pub fn trapezoid(values: &[f64], grid: &[f64]) -> Result<f64, MetricError> {
    if values.len() != grid.len() {
        return Err(MetricError::Shape(format!(
            "{} values on a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    Ok(values
        .windows(2)
        .zip(grid.windows(2))
        .map(|(v, x)| 0.5 * (v[0] + v[1]) * (x[1] - x[0]))
        .sum())
}

fn abs_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect()
}

/// Area between the groups' KDE curves on `[0, 1]`.
pub fn abpc(g: &GroupedScores) -> Result<f64, MetricError> {
    g.require("abpc")?;
    let x = grid();
    trapezoid(&abs_diff(&kde_pdf(&g.s0, &x), &kde_pdf(&g.s1, &x)), &x)
}

/// Area between the groups' empirical CDFs on `[0, 1]`.
pub fn abcc(g: &GroupedScores) -> Result<f64, MetricError> {
    g.require("abcc")?;
    let x = grid();
    trapezoid(&abs_diff(&ecdf(&g.s0, &x), &ecdf(&g.s1, &x)), &x)
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y != 0).count();
    (pos, labels.len() - pos)
}

/// Mann–Whitney AUC with ties counted one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(undefined("auc", "labels contain a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the U statistic, kept integral
    let mut u2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        u2 += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(u2 as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 and accuracy of the rule `ŷ > t`. F1 is 0 when undefined.
pub fn f1_acc_at(scores: &[f64], labels: &[u8], t: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in scores.iter().zip(labels) {
        match (p > t, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = scores.len().max(1) as f64;
    (f1_from_counts(tp, fp, fn_), (tp + tn) as f64 / n)
}

/// Smallest threshold among {0, 1, unique scores} maximising F1.
pub fn optimal_threshold(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(undefined("opt_threshold", "labels contain a single class"));
    }
    let mut pos = Vec::with_capacity(n_pos);
    let mut neg = Vec::with_capacity(n_neg);
    for (&p, &y) in scores.iter().zip(labels) {
        if y != 0 {
            pos.push(p);
        } else {
            neg.push(p);
        }
    }
    let pos = sorted(&pos);
    let neg = sorted(&neg);
    let mut candidates = sorted(scores);
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best = (f64::NEG_INFINITY, 0.0);
    for &t in &candidates {
        let tp = pos.len() - pos.partition_point(|&x| x <= t);
        let fp = neg.len() - neg.partition_point(|&x| x <= t);
        let f1 = f1_from_counts(tp, fp, pos.len() - tp);
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

/// KDE and ECDF curves of both groups on the integration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub pdf0: Vec<f64>,
    pub pdf1: Vec<f64>,
    pub cdf0: Vec<f64>,
    pub cdf1: Vec<f64>,
}

impl DensityCurve {
    pub fn compute(g: &GroupedScores) -> Result<Self, MetricError> {
        g.require("density")?;
        let grid = grid();
        Ok(DensityCurve {
            pdf0: kde_pdf(&g.s0, &grid),
            pdf1: kde_pdf(&g.s1, &grid),
            cdf0: ecdf(&g.s0, &grid),
            cdf1: ecdf(&g.s1, &grid),
            grid,
        })
    }

    /// Writes `x,f0,f1,F0,F1` rows, keeping every `stride`-th grid point.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> std::io::Result<()> {
        writeln!(w, "x,f0,f1,F0,F1")?;
        for k in (0..self.grid.len()).step_by(stride.max(1)) {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.grid[k], self.pdf0[k], self.pdf1[k], self.cdf0[k], self.cdf1[k]
            )?;
        }
        Ok(())
    }
}

/// Test-set report: performance at 0.5 and at the validation-tuned threshold,
/// plus the independence metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub f1_at_0_5: f64,
    pub f1_at_opt: f64,
    pub acc_at_0_5: f64,
    pub acc_at_opt: f64,
    pub opt_threshold: f64,
    pub ddp_b_0_5: f64,
    pub ddp_b_opt: f64,
    pub ddp_c: f64,
    pub abpc: f64,
    pub abcc: f64,
}

impl EvalReport {
    pub const FIELDS: [&'static str; 11] = [
        "auc",
        "f1_at_0_5",
        "f1_at_opt",
        "acc_at_0_5",
        "acc_at_opt",
        "opt_threshold",
        "ddp_b_0_5",
        "ddp_b_opt",
        "ddp_c",
        "abpc",
        "abcc",
    ];

    pub fn compute(
        scores: &[f64],
        labels: &[u8],
        sensitive: &[u8],
        opt_threshold: f64,
    ) -> Result<Self, MetricError> {
        if scores.len() != labels.len() || scores.len() != sensitive.len() {
            return Err(MetricError::Shape("scores, labels and groups differ in length".into()));
        }
        let g = GroupedScores::from_sensitive(scores, sensitive);
        let (f1_at_0_5, acc_at_0_5) = f1_acc_at(scores, labels, 0.5);
        let (f1_at_opt, acc_at_opt) = f1_acc_at(scores, labels, opt_threshold);
        Ok(EvalReport {
            auc: auc(scores, labels)?,
            f1_at_0_5,
            f1_at_opt,
            acc_at_0_5,
            acc_at_opt,
            opt_threshold,
            ddp_b_0_5: delta_dp_b(&g, 0.5)?,
            ddp_b_opt: delta_dp_b(&g, opt_threshold)?,
            ddp_c: delta_dp_c(&g)?,
            abpc: abpc(&g)?,
            abcc: abcc(&g)?,
        })
    }

    pub fn values(&self) -> [f64; 11] {
        [
            self.auc,
            self.f1_at_0_5,
            self.f1_at_opt,
            self.acc_at_0_5,
            self.acc_at_opt,
            self.opt_threshold,
            self.ddp_b_0_5,
            self.ddp_b_opt,
            self.ddp_c,
            self.abpc,
            self.abcc,
        ]
    }
}
