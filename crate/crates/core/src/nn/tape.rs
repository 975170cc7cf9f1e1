//! Append-only reverse-mode tape over matrix values.
//!
//! Nodes are stored in creation order, which is a topological order, so the
//! backward pass is a single sweep from the loss node down to index 0.

use super::tensor::{gemm, Tensor};
use crate::transport::{self, SinkhornConfig, TransportError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + 1ᵀ·row` with `row` of shape `1 × cols`.
    AddRow(Var, Var),
    /// `scale · a + shift`, elementwise.
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    /// Rows of an embedding table picked by index.
    Gather(Var, Vec<usize>),
    /// Column-wise concatenation.
    Concat(Vec<Var>),
    /// Columns `start .. start + width` of the parent.
    SliceCols(Var, usize),
    /// Row `r` taken from `srcs[idx[r]]`; all sources share one shape.
    PickRows(Vec<Var>, Vec<usize>),
    /// Rows of the parent listed in `idx`, in that order.
    SelectRows(Var, Vec<usize>),
    /// Entropic OT cost between two column vectors.
    Sinkhorn(Var, Var, Box<transport::Sinkhorn>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Adjoints {
    /// Gradient of the loss with respect to `v`; zeros if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Tensor::zeros(r, c)
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            &self.value(a).data,
            false,
            &self.value(b).data,
            false,
            &mut out.data,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, av.cols), "add_row expects a 1 × cols row");
        let mut out = av.clone();
        for r in 0..out.rows {
            out.row_mut(r)
                .iter_mut()
                .zip(&rv.data)
                .for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data.iter().sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert!(!v.is_empty(), "mean of empty tensor");
        let out = Tensor::scalar(v.data.iter().sum::<f64>() / v.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        self.push(out, Op::Gather(table, idx), rg)
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in &parts {
                let v = self.value(p);
                assert_eq!(v.rows, rows, "concat row mismatch");
                out.row_mut(r)[off..off + v.cols].copy_from_slice(v.row(r));
                off += v.cols;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::Concat(parts), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a);
        assert!(start + width <= v.cols, "slice out of range");
        let mut out = Tensor::zeros(v.rows, width);
        for r in 0..v.rows {
            out.row_mut(r)
                .copy_from_slice(&v.row(r)[start..start + width]);
        }
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn pick_rows(&mut self, srcs: Vec<Var>, idx: Vec<usize>) -> Var {
        let (rows, cols) = self.shape(srcs[0]);
        assert_eq!(idx.len(), rows, "pick_rows needs one index per row");
        let mut out = Tensor::zeros(rows, cols);
        for (r, &s) in idx.iter().enumerate() {
            let v = self.value(srcs[s]);
            assert_eq!(v.shape(), (rows, cols), "pick_rows source shape mismatch");
            out.row_mut(r).copy_from_slice(v.row(r));
        }
        let rg = srcs.iter().any(|&p| self.rg(p));
        self.push(out, Op::PickRows(srcs, idx), rg)
    }

    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a);
        let mut out = Tensor::zeros(idx.len(), v.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(v.row(i));
        }
        let rg = self.rg(a);
        self.push(out, Op::SelectRows(a, idx), rg)
    }

    /// Sinkhorn cost between the entries of two column vectors. Returns the
    /// node and whether the iterations converged.
    pub fn sinkhorn(
        &mut self,
        a: Var,
        b: Var,
        cfg: &SinkhornConfig,
    ) -> Result<(Var, bool), TransportError> {
        let solved = transport::sinkhorn(&self.value(a).data, &self.value(b).data, cfg)?;
        let converged = solved.converged;
        let out = Tensor::scalar(solved.value);
        let rg = self.rg(a) || self.rg(b);
        Ok((self.push(out, Op::Sinkhorn(a, b, Box::new(solved)), rg), converged))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Adjoints {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar");
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let acc = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let nn = self.shape(*b).1;
                    if self.rg(*a) {
                        let mut ga = Tensor::zeros(m, k);
                        gemm(m, nn, k, &g.data, false, &self.value(*b).data, true, &mut ga.data, false);
                        acc(*a, ga, &mut grads);
                    }
                    if self.rg(*b) {
                        let mut gb = Tensor::zeros(k, nn);
                        gemm(k, m, nn, &self.value(*a).data, true, &g.data, false, &mut gb.data, false);
                        acc(*b, gb, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.map(|x| -x), &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, zip_map(&g, self.value(*b), |x, y| x * y), &mut grads);
                    }
                    if self.rg(*b) {
                        acc(*b, zip_map(&g, self.value(*a), |x, y| x * y), &mut grads);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let mut gr = Tensor::zeros(1, g.cols);
                        for r in 0..g.rows {
                            gr.data.iter_mut().zip(g.row(r)).for_each(|(o, x)| *o += x);
                        }
                        acc(*row, gr, &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::Affine(a, scale) => {
                    let s = *scale;
                    acc(*a, g.map(|x| s * x), &mut grads);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, zip_map(&g, y, |g, y| g * y * (1.0 - y)), &mut grads);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, zip_map(&g, y, |g, y| g * (1.0 - y * y)), &mut grads);
                }
                Op::Log(a) => {
                    acc(*a, zip_map(&g, self.value(*a), |g, x| g / x), &mut grads);
                }
                Op::Exp(a) => {
                    acc(*a, zip_map(&g, &node.value, |g, y| g * y), &mut grads);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = zip_map(&g, self.value(*a), |g, x| {
                        if (lo..=hi).contains(&x) {
                            g
                        } else {
                            0.0
                        }
                    });
                    acc(*a, ga, &mut grads);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(*a, Tensor::filled(r, c, g.item()), &mut grads);
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    acc(*a, Tensor::filled(r, c, g.item() / (r * c) as f64), &mut grads);
                }
                Op::Gather(table, idx) => {
                    let (r, c) = self.shape(*table);
                    let mut gt = Tensor::zeros(r, c);
                    for (row, &i) in idx.iter().enumerate() {
                        gt.row_mut(i)
                            .iter_mut()
                            .zip(g.row(row))
                            .for_each(|(o, x)| *o += x);
                    }
                    acc(*table, gt, &mut grads);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        if self.rg(p) {
                            let mut gp = Tensor::zeros(r, c);
                            for row in 0..r {
                                gp.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                            }
                            acc(p, gp, &mut grads);
                        }
                        off += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    for row in 0..r {
                        ga.row_mut(row)[*start..*start + g.cols].copy_from_slice(g.row(row));
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::PickRows(srcs, idx) => {
                    let (r, c) = g.shape();
                    let mut per_src: Vec<Option<Tensor>> = vec![None; srcs.len()];
                    for (row, &s) in idx.iter().enumerate() {
                        if !self.rg(srcs[s]) {
                            continue;
                        }
                        per_src[s]
                            .get_or_insert_with(|| Tensor::zeros(r, c))
                            .row_mut(row)
                            .copy_from_slice(g.row(row));
                    }
                    for (s, t) in per_src.into_iter().enumerate() {
                        if let Some(t) = t {
                            acc(srcs[s], t, &mut grads);
                        }
                    }
                }
                Op::SelectRows(a, idx) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Tensor::zeros(r, c);
                    for (row, &i) in idx.iter().enumerate() {
                        ga.row_mut(i)
                            .iter_mut()
                            .zip(g.row(row))
                            .for_each(|(o, x)| *o += x);
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::Sinkhorn(a, b, solved) => {
                    let (ga, gb) = solved.gradient(g.item());
                    acc(*a, Tensor::column(ga), &mut grads);
                    acc(*b, Tensor::column(gb), &mut grads);
                }
            }
        }
        Adjoints {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }
}
