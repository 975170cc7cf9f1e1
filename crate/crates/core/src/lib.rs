//! Fairness-aware outcome-oriented predictive process monitoring.
//!
//! The crate is organised bottom-up:
//!
//! - [`eventlog`]: event-log data model, CSV ingestion, outcome labelling,
//!   case-level splits, prefix extraction and a synthetic biased-log generator.
//! - [`encoding`]: fixed-length index/numeric tensors with masks, fitted on
//!   training data only.
//! - [`metrics`]: AUC, F1/accuracy, and the independence metrics ΔDP_c,
//!   ΔDP_b^t, ABPC and ABCC.
//! - [`transport`]: exact 1-D Wasserstein-1 distance and a differentiable
//!   Sinkhorn approximation.
//! - [`nn`]: a small reverse-mode tape, the masked (bi)LSTM classifier, the
//!   composite BCE + IPM loss and AdamW with plateau scheduling.
//! - [`train`]: training loop, grid search, λ sweeps, Pareto fronts and
//!   test-set evaluation.

pub mod encoding;
pub mod eventlog;
pub mod metrics;
pub mod nn;
pub mod train;
pub mod transport;

mod seed;

pub use seed::derive_seed;
