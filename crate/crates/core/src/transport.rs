//! One-dimensional optimal transport between score samples.
//!
//! [`exact_w1_1d`] integrates |F_a − F_b| exactly over the merged support.
//! [`sinkhorn`] solves the entropic problem with cost `|a_i − b_j|` and
//! uniform marginals by alternating potential updates kept in the log domain,
//! and reports the transport cost ⟨P, C⟩ of the resulting plan. Its gradient
//! with respect to both inputs is obtained by reverse-mode differentiation of
//! the unrolled iterations.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("empty sample")]
    Empty,
    #[error("non-finite input value")]
    NonFinite,
    #[error("invalid sinkhorn config: {0}")]
    Config(String),
}

fn default_epsilon() -> f64 {
    0.01
}
fn default_max_iters() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once the L1 row-marginal violation drops below this value.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: default_epsilon(),
            max_iters: default_max_iters(),
            convergence_tol: default_tol(),
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(TransportError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(TransportError::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

fn check(xs: &[f64]) -> Result<(), TransportError> {
    if xs.is_empty() {
        return Err(TransportError::Empty);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(TransportError::NonFinite);
    }
    Ok(())
}

/// Exact Wasserstein-1 distance between two uniform empirical measures.
pub fn exact_w1_1d(a: &[f64], b: &[f64]) -> Result<f64, TransportError> {
    check(a)?;
    check(b)?;
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (n, m) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = sa
            .get(i)
            .copied()
            .unwrap_or(f64::INFINITY)
            .min(sb.get(j).copied().unwrap_or(f64::INFINITY));
        total += (i as f64 / n - j as f64 / m).abs() * (next - prev);
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Below this bound on max(C)/ε the log-sum-exps are computed as products
/// with the Gibbs kernel exp(−C/ε); above it every term is exponentiated.
const KERNEL_EXPONENT_LIMIT: f64 = 250.0;

#[derive(Debug, Clone, Copy)]
struct Step {
    decay: f64,
    idx: usize,
    source: bool,
}

/// Products with K_ij = exp(−|a_i − b_j|/ε) and with K_ij · sign(a_i − b_j)
/// in O(n + m). On a sorted line exp(−|x − y|/ε) factors through the gaps
/// between neighbours, so one ascending and one descending sweep give the
/// sums over strictly smaller and strictly larger sources. Ties are summed
/// separately. Ordering is `total_cmp`, matching the sign convention.
struct LineKernel {
    n: usize,
    m: usize,
    rows_up: Vec<Step>,
    rows_down: Vec<Step>,
    cols_up: Vec<Step>,
    cols_down: Vec<Step>,
    ties: Vec<(Vec<usize>, Vec<usize>)>,
}

fn schedule(tgt: &[f64], src: &[f64], eps: f64, descending: bool) -> Vec<Step> {
    let mut pts: Vec<(f64, bool, usize)> = tgt
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, false, i))
        .chain(src.iter().enumerate().map(|(j, &v)| (v, true, j)))
        .collect();
    // targets go first among equal values so ties are excluded
    pts.sort_by(|x, y| {
        let by_value = if descending { y.0.total_cmp(&x.0) } else { x.0.total_cmp(&y.0) };
        by_value.then(x.1.cmp(&y.1))
    });
    let mut prev = pts.first().map_or(0.0, |p| p.0);
    pts.into_iter()
        .map(|(v, source, idx)| {
            let decay = (-(v - prev).abs() / eps).exp();
            prev = v;
            Step { decay, idx, source }
        })
        .collect()
}

fn sweep(steps: &[Step], v: &[f64], out: &mut [f64]) {
    let mut acc = 0.0;
    for s in steps {
        acc *= s.decay;
        if s.source {
            acc += v[s.idx];
        } else {
            out[s.idx] = acc;
        }
    }
}

impl LineKernel {
    fn new(a: &[f64], b: &[f64], eps: f64) -> LineKernel {
        let mut pts: Vec<(f64, bool, usize)> = a
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, false, i))
            .chain(b.iter().enumerate().map(|(j, &v)| (v, true, j)))
            .collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let ties = pts
            .chunk_by(|x, y| x.0.total_cmp(&y.0) == Ordering::Equal)
            .filter_map(|group| {
                let ai: Vec<usize> = group.iter().filter(|p| !p.1).map(|p| p.2).collect();
                let bj: Vec<usize> = group.iter().filter(|p| p.1).map(|p| p.2).collect();
                (!ai.is_empty() && !bj.is_empty()).then_some((ai, bj))
            })
            .collect();
        LineKernel {
            n: a.len(),
            m: b.len(),
            rows_up: schedule(a, b, eps, false),
            rows_down: schedule(a, b, eps, true),
            cols_up: schedule(b, a, eps, false),
            cols_down: schedule(b, a, eps, true),
            ties,
        }
    }

    /// (K v, (K∘S) v) for v indexed by b.
    fn rows(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut below = vec![0.0; self.n];
        let mut above = vec![0.0; self.n];
        sweep(&self.rows_up, v, &mut below);
        sweep(&self.rows_down, v, &mut above);
        let mut plain: Vec<f64> = below.iter().zip(&above).map(|(l, u)| l + u).collect();
        for (ai, bj) in &self.ties {
            let e: f64 = bj.iter().map(|&j| v[j]).sum();
            for &i in ai {
                plain[i] += e;
            }
        }
        let signed = below.iter().zip(&above).map(|(l, u)| l - u).collect();
        (plain, signed)
    }

    /// (Kᵀ v, (K∘S)ᵀ v) for v indexed by a.
    fn cols(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut below = vec![0.0; self.m];
        let mut above = vec![0.0; self.m];
        sweep(&self.cols_up, v, &mut below);
        sweep(&self.cols_down, v, &mut above);
        let mut plain: Vec<f64> = below.iter().zip(&above).map(|(l, u)| l + u).collect();
        for (ai, bj) in &self.ties {
            let e: f64 = ai.iter().map(|&i| v[i]).sum();
            for &j in bj {
                plain[j] += e;
            }
        }
        // sign(a_i − b_j) is +1 for sources above the target b_j
        let signed = below.iter().zip(&above).map(|(l, u)| u - l).collect();
        (plain, signed)
    }
}

struct Problem {
    n: usize,
    m: usize,
    eps: f64,
    cost: Vec<f64>,
    kernel: Option<LineKernel>,
    log_mu: f64,
    log_nu: f64,
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl Problem {
    fn new(a: &[f64], b: &[f64], eps: f64) -> Problem {
        let (n, m) = (a.len(), b.len());
        let mut cost = Vec::with_capacity(n * m);
        for &x in a {
            cost.extend(b.iter().map(|&y| (x - y).abs()));
        }
        let kernel = (max_of(&cost) / eps <= KERNEL_EXPONENT_LIMIT)
            .then(|| LineKernel::new(a, b, eps));
        Problem {
            n,
            m,
            eps,
            cost,
            kernel,
            log_mu: -(n as f64).ln(),
            log_nu: -(m as f64).ln(),
        }
    }

    /// f_i = −ε · LSE_j((g_j − C_ij)/ε + log ν).
    fn row_update(&self, g: &[f64]) -> Vec<f64> {
        let eps = self.eps;
        let shift = max_of(g);
        match &self.kernel {
            Some(k) => {
                let beta: Vec<f64> = g.iter().map(|gj| ((gj - shift) / eps).exp()).collect();
                k.rows(&beta)
                    .0
                    .iter()
                    .map(|s| -shift - eps * (s.ln() + self.log_nu))
                    .collect()
            }
            None => self
                .cost
                .chunks_exact(self.m)
                .map(|row| {
                    let z = row.iter().zip(g).map(|(c, gj)| (gj - c) / eps);
                    let top = z.clone().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = z.map(|v| (v - top).exp()).sum();
                    -eps * (top + s.ln() + self.log_nu)
                })
                .collect(),
        }
    }

    /// g_j = −ε · LSE_i((f_i − C_ij)/ε + log μ).
    fn col_update(&self, f: &[f64]) -> Vec<f64> {
        let eps = self.eps;
        let (n, m) = (self.n, self.m);
        match &self.kernel {
            Some(k) => {
                let shift = max_of(f);
                let alpha: Vec<f64> = f.iter().map(|fi| ((fi - shift) / eps).exp()).collect();
                k.cols(&alpha)
                    .0
                    .iter()
                    .map(|s| -shift - eps * (s.ln() + self.log_mu))
                    .collect()
            }
            None => {
                let mut top = vec![f64::NEG_INFINITY; m];
                for (i, row) in self.cost.chunks_exact(m).enumerate() {
                    for j in 0..m {
                        top[j] = top[j].max((f[i] - row[j]) / eps);
                    }
                }
                let mut s = vec![0.0; m];
                for i in 0..n {
                    let row = &self.cost[i * m..(i + 1) * m];
                    for j in 0..m {
                        s[j] += ((f[i] - row[j]) / eps - top[j]).exp();
                    }
                }
                (0..m)
                    .map(|j| -eps * (top[j] + s[j].ln() + self.log_mu))
                    .collect()
            }
        }
    }

    /// exp((f_i + g_j − C_ij)/ε + shift) into `out`.
    fn plan_into(&self, f: &[f64], g: &[f64], shift: f64, out: &mut [f64]) {
        let eps = self.eps;
        for (i, (o, cr)) in out
            .chunks_exact_mut(self.m)
            .zip(self.cost.chunks_exact(self.m))
            .enumerate()
        {
            for ((o, c), gj) in o.iter_mut().zip(cr).zip(g) {
                *o = ((f[i] + gj - c) / eps + shift).exp();
            }
        }
    }

    fn plan(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n * self.m];
        self.plan_into(f, g, self.log_mu + self.log_nu, &mut p);
        p
    }
}

/// Result of a Sinkhorn solve, retaining the iterates needed for the
/// reverse pass.
pub struct Sinkhorn {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_violation: f64,
    problem: Problem,
    swapped: bool,
    signs: Vec<f64>,
    f_hist: Vec<Vec<f64>>,
    g_hist: Vec<Vec<f64>>,
}

impl std::fmt::Debug for Sinkhorn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sinkhorn")
            .field("value", &self.value)
            .field("converged", &self.converged)
            .field("iterations", &self.iterations)
            .field("marginal_violation", &self.marginal_violation)
            .finish()
    }
}

fn canonical_order(a: &[f64], b: &[f64]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Entropic OT cost between the uniform measures on `a` and `b`.
///
/// The inputs are put in a canonical order before solving, which makes the
/// result exactly symmetric in `(a, b)`. Running out of iterations is not an
/// error; check [`Sinkhorn::converged`].
pub fn sinkhorn(a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<Sinkhorn, TransportError> {
    cfg.validate()?;
    check(a)?;
    check(b)?;
    let swapped = canonical_order(a, b) == Ordering::Greater;
    let (a, b) = if swapped { (b, a) } else { (a, b) };
    let problem = Problem::new(a, b, cfg.epsilon);
    let eps = cfg.epsilon;
    let mu = (problem.log_mu).exp();

    let mut f_hist = Vec::new();
    let mut g_hist = Vec::new();
    let mut f = problem.row_update(&vec![0.0; problem.m]);
    let mut converged = false;
    let mut violation: f64;
    loop {
        let g = problem.col_update(&f);
        let f_next = problem.row_update(&g);
        // row sums of the current plan are μ_i · exp((f_i − f_next_i)/ε)
        violation = f
            .iter()
            .zip(&f_next)
            .map(|(fi, fn_)| mu * (((fi - fn_) / eps).exp() - 1.0).abs())
            .sum();
        f_hist.push(f);
        g_hist.push(g);
        if violation < cfg.convergence_tol {
            converged = true;
            break;
        }
        if f_hist.len() >= cfg.max_iters || !violation.is_finite() {
            break;
        }
        f = f_next;
    }

    let p = problem.plan(f_hist.last().unwrap(), g_hist.last().unwrap());
    let value = p.iter().zip(&problem.cost).map(|(p, c)| p * c).sum();
    let mut signs = Vec::with_capacity(problem.n * problem.m);
    for &x in a {
        signs.extend(b.iter().map(|&y| match x.total_cmp(&y) {
            Ordering::Greater => 1.0,
            Ordering::Less => -1.0,
            Ordering::Equal => 0.0,
        }));
    }
    Ok(Sinkhorn {
        value,
        converged,
        iterations: f_hist.len(),
        marginal_violation: violation,
        problem,
        swapped,
        signs,
        f_hist,
        g_hist,
    })
}

/// Convenience wrapper returning only the value.
pub fn sinkhorn_distance(a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<f64, TransportError> {
    sinkhorn(a, b, cfg).map(|s| s.value)
}

impl Sinkhorn {
    /// Gradients of `upstream · value` with respect to the original `a` and `b`.
    ///
    /// This is the exact reverse of the forward computation: the adjoints of
    /// the potentials are propagated back through every stored iteration, and
    /// the cost adjoint is contracted with sign(a_i − b_j) as it accumulates.
    pub fn gradient(&self, upstream: f64) -> (Vec<f64>, Vec<f64>) {
        let pr = &self.problem;
        let (n, m, eps) = (pr.n, pr.m, pr.eps);
        let k_last = self.f_hist.len() - 1;
        let mut da = vec![0.0; n];
        let mut db = vec![0.0; m];
        let mut fbar = vec![0.0; n];
        let mut gbar = vec![0.0; m];

        // value = Σ P_ij C_ij with P depending on C directly and on (f, g)
        let p = pr.plan(&self.f_hist[k_last], &self.g_hist[k_last]);
        for i in 0..n {
            for j in 0..m {
                let (pij, c, s) = (p[i * m + j], pr.cost[i * m + j], self.signs[i * m + j]);
                let w = upstream * pij * c / eps;
                fbar[i] += w;
                gbar[j] += w;
                let cb = upstream * pij * (1.0 - c / eps) * s;
                da[i] += cb;
                db[j] -= cb;
            }
        }

        match &pr.kernel {
            Some(k) => self.reverse_kernel(k, &mut fbar, &mut gbar, &mut da, &mut db),
            None => self.reverse_log(&mut fbar, &mut gbar, &mut da, &mut db),
        }

        if self.swapped {
            (db, da)
        } else {
            (da, db)
        }
    }

    /// Reverse sweep written as products with K and K∘sign(C); the plans
    /// ρ = diag(ra)·K·diag(rb) and π = diag(pa)·K·diag(pb) are never formed.
    fn reverse_kernel(
        &self,
        k: &LineKernel,
        fbar: &mut [f64],
        gbar: &mut [f64],
        da: &mut [f64],
        db: &mut [f64],
    ) {
        let pr = &self.problem;
        let (n, m, eps) = (pr.n, pr.m, pr.eps);
        let zeros = vec![0.0; m];
        let scaled = |g: &[f64]| {
            let top = max_of(g);
            (top, g.iter().map(|gj| ((gj - top) / eps).exp()).collect::<Vec<f64>>())
        };
        let mut x = vec![0.0; m];
        let mut y = vec![0.0; n];
        let mut ra = vec![0.0; n];
        for it in (0..self.f_hist.len()).rev() {
            let f = &self.f_hist[it];
            let g_prev = if it > 0 { &self.g_hist[it - 1] } else { &zeros };
            let (gmax, rb) = scaled(&self.g_hist[it]);
            let (pmax, pb) = scaled(g_prev);
            for j in 0..m {
                x[j] = rb[j] * gbar[j];
            }
            let (u, v) = k.rows(&x);
            let (_, w) = k.rows(&pb);
            for i in 0..n {
                ra[i] = ((f[i] + gmax) / eps + pr.log_mu).exp();
                let pa = ((f[i] + pmax) / eps + pr.log_nu).exp();
                fbar[i] -= ra[i] * u[i];
                da[i] += ra[i] * v[i];
                y[i] = pa * fbar[i];
                da[i] += y[i] * w[i];
            }
            let (_, z) = k.cols(&ra);
            let (q, r) = k.cols(&y);
            for j in 0..m {
                db[j] -= gbar[j] * rb[j] * z[j] + pb[j] * r[j];
                gbar[j] = -pb[j] * q[j];
            }
            fbar.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Reverse sweep with every plan entry exponentiated directly.
    fn reverse_log(&self, fbar: &mut [f64], gbar: &mut [f64], da: &mut [f64], db: &mut [f64]) {
        let pr = &self.problem;
        let (n, m) = (pr.n, pr.m);
        let zeros = vec![0.0; m];
        let mut buf = vec![0.0; n * m];
        for it in (0..self.f_hist.len()).rev() {
            let f = &self.f_hist[it];
            let g = &self.g_hist[it];
            let g_prev = if it > 0 { &self.g_hist[it - 1] } else { &zeros };

            // g = G(f): ∂g_j/∂f_i = −ρ_ij, ∂g_j/∂C_ij = ρ_ij
            pr.plan_into(f, g, pr.log_mu, &mut buf);
            for i in 0..n {
                for j in 0..m {
                    let w = buf[i * m + j] * gbar[j];
                    fbar[i] -= w;
                    let c = w * self.signs[i * m + j];
                    da[i] += c;
                    db[j] -= c;
                }
            }

            // f = F(g_prev): ∂f_i/∂g_j = −π_ij, ∂f_i/∂C_ij = π_ij
            pr.plan_into(f, g_prev, pr.log_nu, &mut buf);
            gbar.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                for j in 0..m {
                    let w = buf[i * m + j] * fbar[i];
                    gbar[j] -= w;
                    let c = w * self.signs[i * m + j];
                    da[i] += c;
                    db[j] -= c;
                }
            }
            fbar.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
