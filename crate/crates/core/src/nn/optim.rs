use super::model::ModelParams;
use super::tensor::Tensor;
use serde::{Deserialize, Serialize};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }
}

/// First/second moment state for a list of tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, shapes: &[(usize, usize)]) -> AdamW {
        AdamW {
            cfg,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn for_params(cfg: AdamWConfig, params: &ModelParams) -> AdamW {
        let shapes: Vec<_> = params.tensors().iter().map(|t| t.shape()).collect();
        AdamW::new(cfg, &shapes)
    }

    /// One update. Weight decay is applied to the weights before, and
    /// independently of, the moment-based step.
    pub fn update(&mut self, weights: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) {
        assert_eq!(weights.len(), grads.len(), "gradient count mismatch");
        assert_eq!(weights.len(), self.m.len(), "optimizer state mismatch");
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, w) in weights.into_iter().enumerate() {
            let g = &grads[k];
            assert_eq!(w.shape(), g.shape(), "gradient shape mismatch");
            let m = &mut self.m[k].data;
            let v = &mut self.v[k].data;
            for i in 0..w.data.len() {
                w.data[i] -= lr * weight_decay * w.data[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g.data[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g.data[i] * g.data[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn step_params(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.update(params.tensors_mut(), grads, lr);
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs whose loss fails to beat the best by more than `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    best: Option<f64>,
    stall: usize,
}

/// Absolute slack on the improvement comparison, so that a decrease equal
/// to the threshold up to rounding counts as no improvement.
const THRESHOLD_SLACK: f64 = 1e-12;

impl PlateauScheduler {
    pub fn new(lr: f64) -> PlateauScheduler {
        PlateauScheduler {
            lr,
            factor: 0.75,
            patience: 10,
            threshold: 0.001,
            best: None,
            stall: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use next.
    pub fn step(&mut self, loss: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(best) => best - loss > self.threshold + THRESHOLD_SLACK,
        };
        if improved {
            self.best = Some(loss);
            self.stall = 0;
        } else {
            self.stall += 1;
            if self.stall >= self.patience {
                self.lr *= self.factor;
                self.stall = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping with a hard epoch cap. Any strict
/// decrease of the loss counts as an improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub max_epochs: usize,
    pub epoch: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    stall: usize,
}

pub const MAX_EPOCHS: usize = 300;

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping::with_cap(patience, MAX_EPOCHS)
    }

    pub fn with_cap(patience: usize, max_epochs: usize) -> EarlyStopping {
        assert!(patience >= 1, "patience must be at least 1");
        EarlyStopping {
            patience,
            max_epochs,
            epoch: 0,
            best: None,
            best_epoch: 0,
            stall: 0,
        }
    }

    /// Whether the last call set a new best (the caller snapshots then).
    pub fn improved_last(&self) -> bool {
        self.stall == 0 && self.best.is_some()
    }

    pub fn check(&mut self, loss: f64) -> StopDecision {
        self.epoch += 1;
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.best_epoch = self.epoch;
            self.stall = 0;
        } else {
            self.stall += 1;
        }
        if self.stall >= self.patience || self.epoch >= self.max_epochs {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_only_with_zero_gradient() {
        let mut w = Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
        let mut opt = AdamW::new(AdamWConfig::default(), &[(1, 3)]);
        opt.update(vec![&mut w], &[Tensor::zeros(1, 3)], 0.001);
        for (got, orig) in w.data.iter().zip([1.0, -2.0, 0.5]) {
            assert!((got - orig * (1.0 - 1e-5)).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut w = Tensor::from_vec(1, 2, vec![0.0, 0.0]);
        let mut opt = AdamW::new(cfg, &[(1, 2)]);
        opt.update(vec![&mut w], &[Tensor::from_vec(1, 2, vec![3.0, -0.2])], 0.01);
        assert!((w.data[0] + 0.01).abs() < 1e-9);
        assert!((w.data[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn descends_on_square() {
        let mut w = Tensor::scalar(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &[(1, 1)]);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = Tensor::scalar(2.0 * w.data[0]);
            opt.update(vec![&mut w], &[g], 0.01);
            assert!(w.data[0].abs() < prev);
            prev = w.data[0].abs();
        }
    }

    #[test]
    fn scheduler_keeps_lr_while_improving() {
        let mut s = PlateauScheduler::new(0.001);
        for k in 0..30 {
            assert_eq!(s.step(1.0 - 0.01 * k as f64), 0.001);
        }
    }

    #[test]
    fn scheduler_reduces_after_ten_flat_epochs() {
        let mut s = PlateauScheduler::new(0.001);
        s.step(0.5);
        for _ in 0..9 {
            assert_eq!(s.step(0.5), 0.001);
        }
        assert!((s.step(0.5) - 0.00075).abs() < 1e-18);
        // counter restarts after a reduction
        for _ in 0..9 {
            assert!((s.step(0.5) - 0.00075).abs() < 1e-18);
        }
        assert!((s.step(0.5) - 0.0005625).abs() < 1e-18);
    }

    #[test]
    fn scheduler_threshold_is_strict() {
        let mut s = PlateauScheduler::new(0.001);
        s.step(1.0);
        s.step(0.999);
        assert_eq!(s.best(), Some(1.0));
        s.step(0.9989);
        assert_eq!(s.best(), Some(0.9989));
    }

    #[test]
    fn early_stopping_flat_patience_20() {
        let mut es = EarlyStopping::new(20);
        let mut stopped_at = None;
        for _ in 0..100 {
            if es.check(0.7) == StopDecision::Stop {
                stopped_at = Some(es.epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(21));
        assert_eq!(es.best_epoch, 1);
    }

    #[test]
    fn early_stopping_cap() {
        let mut es = EarlyStopping::new(50);
        let mut loss = 10.0;
        let mut n = 0;
        while es.check(loss) == StopDecision::Continue {
            loss -= 0.01;
            n += 1;
        }
        assert_eq!(n + 1, 300);
        assert_eq!(es.epoch, 300);
    }
}
