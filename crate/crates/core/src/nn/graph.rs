//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Every op appends a node holding its forward value. [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients only for nodes that depend on
//! a leaf requiring gradients, so frozen subgraphs cost nothing on the way back.
//! Matrix-valued ops treat a tensor as `[rows, last_dim]`.

use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore};
use super::Tensor;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    MatMulNt { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Gelu { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Softmax { a: Var },
    SliceCols { a: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
    GatherRows { src: Var, idx: Vec<usize> },
    MeanRows { a: Var, rows: Vec<usize> },
    Reshape { a: Var },
    SumAll { a: Var },
    CrossEntropy { logits: Var, targets: Vec<(usize, usize)> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape bound to an optional parameter store.
pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    node_grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.node_grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients for every bound, non-frozen parameter that the loss reached.
    pub fn params(&self) -> Grads {
        let mut out = Grads::default();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out.accumulate(id, g);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    /// A graph with no parameter store; only inputs can be leaves.
    pub fn detached() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Adds a tensor as a leaf. It is differentiable iff the tensor's
    /// `requires_grad` flag is set.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Binds a stored parameter (once per graph) and returns its leaf.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let store = self
            .store
            .ok_or_else(|| Error::Contract("graph has no parameter store".into()))?;
        ensure!(id.0 < store.len(), "unknown parameter id {}", id.0);
        let p = store.param(id);
        let v = self.push(p.value.clone(), Op::Param, !p.frozen);
        self.bound.insert(id, v);
        Ok(v)
    }

    /// `y = x · Wᵀ + b` over the trailing axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        ensure!(wv.shape().len() == 2, "linear weight must be 2-D, got {:?}", wv.shape());
        let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
        ensure!(
            xv.last_dim() == in_dim && !xv.shape().is_empty(),
            "linear expects trailing dim {in_dim}, input has shape {:?}",
            xv.shape()
        );
        if let Some(b) = b {
            ensure!(
                self.value(b).numel() == out_dim,
                "linear bias length {} != out dim {out_dim}",
                self.value(b).numel()
            );
        }
        let rows = xv.rows();
        let mut out = vec![0.0; rows * out_dim];
        let wd = wv.data();
        let bias = b.map(|b| self.value(b).data());
        for r in 0..rows {
            let xr = xv.row(r);
            let yr = &mut out[r * out_dim..(r + 1) * out_dim];
            for (o, y) in yr.iter_mut().enumerate() {
                *y = dot(xr, &wd[o * in_dim..(o + 1) * in_dim]) + bias.map_or(0.0, |b| b[o]);
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg))
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        ensure!(
            av.shape().len() == 2 && bv.shape().len() == 2 && av.shape()[1] == bv.shape()[0],
            "matmul shape mismatch {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ci = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(av.data()[i * k + p], &bv.data()[p * n..(p + 1) * n], ci);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg))
    }

    /// `[m,k] · [n,k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        ensure!(
            av.shape().len() == 2 && bv.shape().len() == 2 && av.shape()[1] == bv.shape()[1],
            "matmul_nt shape mismatch {:?} x {:?}ᵀ",
            av.shape(),
            bv.shape()
        );
        let (m, n) = (av.shape()[0], bv.shape()[0]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dot(av.row(i), bv.row(j));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure!(
            self.shape(a) == self.shape(b),
            "add shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    /// Sums a non-empty list of same-shaped tensors.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        ensure!(!vars.is_empty(), "add_all of an empty list");
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure!(
            self.shape(a) == self.shape(b),
            "mul shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale { a, c }, rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| gelu(x)).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Gelu { a }, rg)
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        ensure!(
            self.value(gamma).numel() == d && self.value(beta).numel() == d,
            "layer_norm affine params must have length {d}"
        );
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(xv.numel());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let (mean, rstd) = row_stats(row, eps);
            out.extend(row.iter().enumerate().map(|(i, v)| (v - mean) * rstd * g[i] + bt[i]));
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, eps }, rg))
    }

    /// Row-wise softmax. With `causal`, row `i` only attends to columns `≤ i`
    /// and masked entries are exactly zero.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var> {
        let v = self.value(a);
        ensure!(v.shape().len() == 2, "softmax expects a matrix, got {:?}", v.shape());
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let width = if causal { (r + 1).min(cols) } else { cols };
            let row = &v.row(r)[..width];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * cols..r * cols + width];
            let mut sum = 0.0;
            for (y, x) in o.iter_mut().zip(row) {
                *y = (x - max).exp();
                sum += *y;
            }
            o.iter_mut().for_each(|y| *y /= sum);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::Softmax { a }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a);
        ensure!(
            v.shape().len() == 2 && start + len <= v.shape()[1],
            "slice_cols {start}..{} out of range for {:?}",
            start + len,
            v.shape()
        );
        let rows = v.shape()[0];
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![rows, len], out)?, Op::SliceCols { a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            ensure!(
                self.shape(p).len() == 2 && self.shape(p)[0] == rows,
                "concat_cols row mismatch"
            );
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols { parts: parts.to_vec() },
            rg,
        ))
    }

    /// Stacks rows of `[n_i, d]` (or `[d]`, counted as one row) tensors.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_rows of nothing");
        let d = self.value(parts[0]).last_dim();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            ensure!(
                v.last_dim() == d && !v.shape().is_empty(),
                "concat_rows width mismatch: {} vs {d}",
                v.last_dim()
            );
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::ConcatRows { parts: parts.to_vec() },
            rg,
        ))
    }

    /// Picks rows of `src` by index (embedding lookup, position selection).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(src);
        let d = v.last_dim();
        let n = v.rows();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            ensure!(i < n, "gather_rows index {i} out of range ({n} rows)");
            out.extend_from_slice(v.row(i));
        }
        let rg = self.rg(src);
        Ok(self.push(
            Tensor::new(vec![idx.len(), d], out)?,
            Op::GatherRows { src, idx: idx.to_vec() },
            rg,
        ))
    }

    /// Mean of the selected rows, as a `[1, d]` tensor.
    pub fn mean_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        ensure!(!rows.is_empty(), "mean_rows over an empty row set");
        let v = self.value(a);
        let d = v.last_dim();
        let n = v.rows();
        let mut out = vec![0.0; d];
        for &r in rows {
            ensure!(r < n, "mean_rows index {r} out of range ({n} rows)");
            axpy(1.0, v.row(r), &mut out);
        }
        let inv = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![1, d], out)?,
            Op::MeanRows { a, rows: rows.to_vec() },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t.with_requires_grad(false), Op::Reshape { a }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, rg)
    }

    /// Mean cross-entropy over `(row, class)` targets of a `[n, V]` logit
    /// matrix. Rows that are not listed do not influence the loss.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        ensure!(!targets.is_empty(), "cross_entropy needs at least one target");
        let v = self.value(logits);
        let (n, vocab) = (v.rows(), v.last_dim());
        let mut total = 0.0;
        for &(r, c) in targets {
            ensure!(
                r < n && c < vocab,
                "cross_entropy target ({r},{c}) out of range [{n},{vocab}]"
            );
            let row = v.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[c];
        }
        let loss = total / targets.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).numel() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let params = self.bound.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients {
            node_grads: grads,
            params,
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn propagate(&self, op: &Op, out: &Tensor, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if let Some(dx) = self.acc(grads, *x) {
                    for r in 0..rows {
                        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            axpy(dy[r * out_dim + o], &wv.data()[o * in_dim..(o + 1) * in_dim], dxr);
                        }
                    }
                }
                if let Some(dw) = self.acc(grads, *w) {
                    for r in 0..rows {
                        let xr = xv.row(r);
                        for o in 0..out_dim {
                            axpy(dy[r * out_dim + o], xr, &mut dw[o * in_dim..(o + 1) * in_dim]);
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.acc(grads, *b) {
                        for r in 0..rows {
                            axpy(1.0, &dy[r * out_dim..(r + 1) * out_dim], db);
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(da) = self.acc(grads, *a) {
                    for i in 0..m {
                        for p in 0..k {
                            da[i * k + p] += dot(&dy[i * n..(i + 1) * n], bv.row(p));
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for i in 0..m {
                        for p in 0..k {
                            axpy(
                                av.data()[i * k + p],
                                &dy[i * n..(i + 1) * n],
                                &mut db[p * n..(p + 1) * n],
                            );
                        }
                    }
                }
            }
            Op::MatMulNt { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                if let Some(da) = self.acc(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(dy[i * n + j], bv.row(j), &mut da[i * k..(i + 1) * k]);
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(dy[i * n + j], av.row(i), &mut db[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(d) = self.acc(grads, *v) {
                        axpy(1.0, dy, d);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(grads, *a) {
                    for i in 0..dy.len() {
                        da[i] += dy[i] * bv[i];
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for i in 0..dy.len() {
                        db[i] += dy[i] * av[i];
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(da) = self.acc(grads, *a) {
                    axpy(*c, dy, da);
                }
            }
            Op::Gelu { a } => {
                let av = self.value(*a).data();
                if let Some(da) = self.acc(grads, *a) {
                    for i in 0..dy.len() {
                        da[i] += dy[i] * gelu_grad(av[i]);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = self.value(*x);
                let g = self.value(*gamma).data();
                let d = xv.last_dim();
                let rows = xv.rows();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx_all = vec![0.0; xv.numel()];
                for r in 0..rows {
                    let row = xv.row(r);
                    let (mean, rstd) = row_stats(row, *eps);
                    let dyr = &dy[r * d..(r + 1) * d];
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                    let dxhat: Vec<f64> = dyr.iter().zip(g).map(|(a, b)| a * b).collect();
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dot(&dxhat, &xhat) / d as f64;
                    for i in 0..d {
                        dx_all[r * d + i] = rstd * (dxhat[i] - m1 - xhat[i] * m2);
                        dgamma[i] += dyr[i] * xhat[i];
                        dbeta[i] += dyr[i];
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    axpy(1.0, &dx_all, dx);
                }
                if let Some(dg) = self.acc(grads, *gamma) {
                    axpy(1.0, &dgamma, dg);
                }
                if let Some(db) = self.acc(grads, *beta) {
                    axpy(1.0, &dbeta, db);
                }
            }
            Op::Softmax { a } => {
                let cols = out.shape()[1];
                if let Some(da) = self.acc(grads, *a) {
                    for r in 0..out.shape()[0] {
                        let y = out.row(r);
                        let dyr = &dy[r * cols..(r + 1) * cols];
                        let s = dot(y, dyr);
                        for j in 0..cols {
                            da[r * cols + j] += y[j] * (dyr[j] - s);
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let cols = self.shape(*a)[1];
                let len = out.shape()[1];
                if let Some(da) = self.acc(grads, *a) {
                    for r in 0..out.shape()[0] {
                        axpy(
                            1.0,
                            &dy[r * len..(r + 1) * len],
                            &mut da[r * cols + start..r * cols + start + len],
                        );
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total = out.shape()[1];
                let rows = out.shape()[0];
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if let Some(dp) = self.acc(grads, *p) {
                        for r in 0..rows {
                            axpy(
                                1.0,
                                &dy[r * total + offset..r * total + offset + w],
                                &mut dp[r * w..(r + 1) * w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if let Some(dp) = self.acc(grads, *p) {
                        axpy(1.0, &dy[offset..offset + n], dp);
                    }
                    offset += n;
                }
            }
            Op::GatherRows { src, idx } => {
                let d = out.last_dim();
                if let Some(ds) = self.acc(grads, *src) {
                    for (k, &i) in idx.iter().enumerate() {
                        axpy(1.0, &dy[k * d..(k + 1) * d], &mut ds[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::MeanRows { a, rows } => {
                let d = out.last_dim();
                let inv = 1.0 / rows.len() as f64;
                if let Some(da) = self.acc(grads, *a) {
                    for &r in rows {
                        axpy(inv, dy, &mut da[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(da) = self.acc(grads, *a) {
                    axpy(1.0, dy, da);
                }
            }
            Op::SumAll { a } => {
                if let Some(da) = self.acc(grads, *a) {
                    da.iter_mut().for_each(|v| *v += dy[0]);
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let vocab = lv.last_dim();
                let scale = dy[0] / targets.len() as f64;
                if let Some(dl) = self.acc(grads, *logits) {
                    for &(r, c) in targets {
                        let row = lv.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
                        let d = &mut dl[r * vocab..(r + 1) * vocab];
                        for j in 0..vocab {
                            d[j] += scale * (row[j] - max).exp() / sum;
                        }
                        d[c] -= scale;
                    }
                }
            }
        }
    }
}
