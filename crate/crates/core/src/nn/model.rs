use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NnError;
use crate::encoding::{EncodedPrefix, EncoderSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shape of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `(rows, dim)` per categorical channel; row 0 is padding/unknown.
    pub embeddings: Vec<(usize, usize)>,
    pub n_numeric: usize,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub dropout: f64,
}

impl Architecture {
    pub fn for_encoder(
        spec: &EncoderSpec,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        dropout: f64,
    ) -> Architecture {
        Architecture {
            embeddings: spec.embedding_dims(),
            n_numeric: spec.numeric.len(),
            hidden,
            layers,
            bidirectional,
            dropout,
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of the per-timestep input to the first LSTM layer.
    pub fn input_width(&self) -> usize {
        self.embeddings.iter().map(|(_, d)| d).sum::<usize>() + self.n_numeric
    }

    /// Width of the representation fed to the dense layer.
    pub fn output_width(&self) -> usize {
        self.hidden * self.directions()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(NnError::Shape("hidden size and layer count must be positive".into()));
        }
        if self.input_width() == 0 {
            return Err(NnError::Shape("model has no input features".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Shape(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Weights of one LSTM direction in one layer. Gates are laid out as
/// input, forget, cell, output along the columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub embeddings: Vec<Tensor>,
    /// Layer-major, direction-minor.
    pub cells: Vec<LstmCell>,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect(),
    )
}

impl ModelParams {
    /// Uniform ±1/√fan_in weights, zero biases except the forget gate at 1.
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<ModelParams, NnError> {
        arch.validate()?;
        let embeddings = arch
            .embeddings
            .iter()
            .map(|&(rows, dim)| uniform(rows, dim, 1.0 / (rows as f64).sqrt(), rng))
            .collect();
        let h = arch.hidden;
        let mut cells = Vec::new();
        for layer in 0..arch.layers {
            let fan_in = if layer == 0 {
                arch.input_width()
            } else {
                arch.output_width()
            };
            for _ in 0..arch.directions() {
                let mut bias = Tensor::zeros(1, 4 * h);
                bias.data[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
                cells.push(LstmCell {
                    w_input: uniform(fan_in, 4 * h, 1.0 / (fan_in as f64).sqrt(), rng),
                    w_hidden: uniform(h, 4 * h, 1.0 / (h as f64).sqrt(), rng),
                    bias,
                });
            }
        }
        let out = arch.output_width();
        Ok(ModelParams {
            arch: arch.clone(),
            embeddings,
            cells,
            dense_w: uniform(out, 1, 1.0 / (out as f64).sqrt(), rng),
            dense_b: Tensor::zeros(1, 1),
        })
    }

    /// Every weight set to zero.
    pub fn zeros(arch: &Architecture) -> Result<ModelParams, NnError> {
        let mut p = ModelParams::init(arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        p.tensors_mut()
            .into_iter()
            .for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        Ok(p)
    }

    /// All trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.embeddings.iter().collect();
        for c in &self.cells {
            out.extend([&c.w_input, &c.w_hidden, &c.bias]);
        }
        out.extend([&self.dense_w, &self.dense_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.embeddings.iter_mut().collect();
        for c in &mut self.cells {
            out.extend([&mut c.w_input, &mut c.w_hidden, &mut c.bias]);
        }
        out.extend([&mut self.dense_w, &mut self.dense_b]);
        out
    }

    pub fn num_weights(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Parameter handles on a tape, aligned with [`ModelParams::tensors`].
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> BoundParams {
        BoundParams {
            vars: params
                .tensors()
                .into_iter()
                .map(|t| tape.param(t.clone()))
                .collect(),
        }
    }

    /// Same as [`BoundParams::bind`] but without gradient tracking.
    pub fn frozen(tape: &mut Tape, params: &ModelParams) -> BoundParams {
        BoundParams {
            vars: params
                .tensors()
                .into_iter()
                .map(|t| tape.constant(t.clone()))
                .collect(),
        }
    }
}

struct CellVars {
    w_input: Var,
    w_hidden: Var,
    bias: Var,
}

fn check_batch(arch: &Architecture, batch: &[&EncodedPrefix]) -> Result<usize, NnError> {
    let first = batch.first().ok_or(NnError::EmptyBatch)?;
    let t = first.max_len();
    for (i, s) in batch.iter().enumerate() {
        if s.max_len() != t
            || s.cat_indices.len() != arch.embeddings.len()
            || s.num_values.len() != arch.n_numeric
        {
            return Err(NnError::Shape(format!(
                "sample {i} does not match the model's channel layout"
            )));
        }
        if s.cat_indices.iter().any(|c| c.len() != t) || s.num_values.iter().any(|c| c.len() != t)
        {
            return Err(NnError::Shape(format!("sample {i} has ragged channels")));
        }
        for (c, (rows, _)) in s.cat_indices.iter().zip(&arch.embeddings) {
            if c.iter().any(|&ix| ix >= *rows) {
                return Err(NnError::Shape(format!("sample {i} has an out-of-vocabulary index")));
            }
        }
        let len = s.len();
        if len == 0 || s.mask[..len].iter().any(|m| !m) {
            return Err(NnError::Shape(format!(
                "sample {i} must have a non-empty, left-aligned mask"
            )));
        }
    }
    Ok(t)
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut impl Rng) -> Var {
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_vec(
        r,
        c,
        (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    );
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Runs one direction of one layer over `inputs` and returns the hidden
/// state after every step.
fn run_lstm(tape: &mut Tape, cell: &CellVars, inputs: &[Var], hidden: usize) -> Vec<Var> {
    let mut outs = Vec::with_capacity(inputs.len());
    let mut state: Option<(Var, Var)> = None;
    for &x in inputs {
        let xw = tape.matmul(x, cell.w_input);
        let pre = match state {
            Some((h, _)) => {
                let hw = tape.matmul(h, cell.w_hidden);
                tape.add(xw, hw)
            }
            None => xw,
        };
        let gates = tape.add_row(pre, cell.bias);
        let i = tape.slice_cols(gates, 0, hidden);
        let f = tape.slice_cols(gates, hidden, hidden);
        let g = tape.slice_cols(gates, 2 * hidden, hidden);
        let o = tape.slice_cols(gates, 3 * hidden, hidden);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let ig = tape.mul(i, g);
        let c = match state {
            Some((_, c_prev)) => {
                let fc = tape.mul(f, c_prev);
                tape.add(fc, ig)
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        outs.push(h);
        state = Some((h, c));
    }
    outs
}

/// Builds the forward graph and returns the `B × 1` propensity node.
///
/// The forward direction is read at each sample's last real position. The
/// backward direction runs over the real span in reverse (padding after it),
/// so its final state is the one at position 0 of the span. Padding therefore
/// never reaches the output.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &[&EncodedPrefix],
    training: bool,
    rng: &mut impl Rng,
) -> Result<Var, NnError> {
    let arch = &params.arch;
    let steps = check_batch(arch, batch)?;
    let lens: Vec<usize> = batch.iter().map(|s| s.len()).collect();
    let n_emb = arch.embeddings.len();
    let emb_vars = &bound.vars[..n_emb];
    let cells: Vec<CellVars> = bound.vars[n_emb..n_emb + 3 * params.cells.len()]
        .chunks_exact(3)
        .map(|c| CellVars {
            w_input: c[0],
            w_hidden: c[1],
            bias: c[2],
        })
        .collect();
    let dense_w = bound.vars[bound.vars.len() - 2];
    let dense_b = bound.vars[bound.vars.len() - 1];
    let active_dropout = training && arch.dropout > 0.0;

    let mut inputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut parts = Vec::with_capacity(n_emb + 1);
        for (c, &table) in emb_vars.iter().enumerate() {
            let idx = batch.iter().map(|s| s.cat_indices[c][t]).collect();
            parts.push(tape.gather(table, idx));
        }
        if arch.n_numeric > 0 {
            let mut num = Tensor::zeros(batch.len(), arch.n_numeric);
            for (b, s) in batch.iter().enumerate() {
                for (c, ch) in s.num_values.iter().enumerate() {
                    num.data[b * arch.n_numeric + c] = ch[t];
                }
            }
            parts.push(tape.constant(num));
        }
        inputs.push(if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_cols(parts)
        });
    }

    // reversal index: position L-1-t inside the span, identity on padding
    let reverse: Vec<Vec<usize>> = (0..steps)
        .map(|t| {
            lens.iter()
                .map(|&l| if t < l { l - 1 - t } else { t })
                .collect()
        })
        .collect();
    let last: Vec<usize> = lens.iter().map(|l| l - 1).collect();

    let mut final_parts = Vec::new();
    for layer in 0..arch.layers {
        let fwd = run_lstm(tape, &cells[layer * arch.directions()], &inputs, arch.hidden);
        let is_last = layer + 1 == arch.layers;
        let bwd = if arch.bidirectional {
            let rev_in: Vec<Var> = reverse
                .iter()
                .map(|idx| tape.pick_rows(inputs.clone(), idx.clone()))
                .collect();
            Some(run_lstm(tape, &cells[layer * 2 + 1], &rev_in, arch.hidden))
        } else {
            None
        };
        if is_last {
            final_parts.push(tape.pick_rows(fwd.clone(), last.clone()));
            if let Some(bwd) = &bwd {
                final_parts.push(tape.pick_rows(bwd.clone(), last.clone()));
            }
            break;
        }
        let mut next = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = match &bwd {
                Some(bwd) => {
                    let aligned = tape.pick_rows(bwd.clone(), reverse[t].clone());
                    tape.concat_cols(vec![fwd[t], aligned])
                }
                None => fwd[t],
            };
            if active_dropout {
                x = dropout(tape, x, arch.dropout, rng);
            }
            next.push(x);
        }
        inputs = next;
    }

    let mut rep = if final_parts.len() == 1 {
        final_parts[0]
    } else {
        tape.concat_cols(final_parts)
    };
    if active_dropout {
        rep = dropout(tape, rep, arch.dropout, rng);
    }
    let logit = tape.matmul(rep, dense_w);
    let logit = tape.add_row(logit, dense_b);
    Ok(tape.sigmoid(logit))
}

/// Propensities in evaluation mode, computed in chunks of `batch_size`.
pub fn predict(
    params: &ModelParams,
    samples: &[EncodedPrefix],
    batch_size: usize,
) -> Result<Vec<f64>, NnError> {
    let mut out = Vec::with_capacity(samples.len());
    // evaluation mode draws nothing from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedPrefix> = chunk.iter().collect();
        let mut tape = Tape::new();
        let bound = BoundParams::frozen(&mut tape, params);
        let p = forward(&mut tape, params, &bound, &refs, false, &mut rng)?;
        out.extend_from_slice(&tape.value(p).data);
    }
    Ok(out)
}
