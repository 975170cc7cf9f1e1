//! Reverse-mode tape, the recurrent outcome classifier, losses and
//! optimisation utilities.

mod loss;
mod model;
mod optim;
mod tape;
mod tensor;

pub use loss::{bce_loss, combine, composite_loss, CompositeLossConfig, LossParts, PROB_CLAMP};
pub use model::{forward, predict, Architecture, BoundParams, LstmCell, ModelParams};
pub use optim::{
    AdamW, AdamWConfig, EarlyStopping, PlateauScheduler, StopDecision, MAX_EPOCHS,
};
pub use tape::{Adjoints, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

/// Gradients of a scalar loss for every tensor of a model, in
/// [`ModelParams::tensors`] order.
pub fn param_gradients(tape: &Tape, loss: Var, bound: &BoundParams) -> Vec<Tensor> {
    let mut adj = tape.backward(loss);
    bound.vars.iter().map(|&v| adj.take(v)).collect()
}
