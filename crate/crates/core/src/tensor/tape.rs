//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its value; [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints into every node that requires a gradient.

use std::collections::HashMap;

use super::ops::{self, gemm_nn, gemm_nt, gemm_tn};
use super::{ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
    #[cfg(test)]
    Faulty(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A leaf holding `value`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let mut value = value;
        value.zero_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf for a named parameter, created once per tape. The leaf requires a
    /// gradient exactly when the parameter is trainable.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        let v = self.leaf(p.tensor.clone(), p.trainable.is_trainable());
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    /// Parameters registered on this tape, in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.param_order
    }

    /// Adds each registered parameter's gradient into the store's gradient
    /// buffers. Trainable parameters that the loss does not reach receive an
    /// explicit zero gradient.
    pub fn write_param_grads(&self, store: &mut ParameterStore) -> Result<()> {
        for (name, v) in &self.param_order {
            let node = &self.nodes[v.0];
            if !node.requires_grad {
                continue;
            }
            let t = store.tensor_mut(name)?;
            match &node.grad {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; node.value.numel()])?,
            }
        }
        Ok(())
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                left: s.to_vec(),
                right: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", a, b));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds the length-`n` vector `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).as_matrix_dims();
        if self.value(bias).numel() != n {
            return Err(self.shape_err("add_bias", x, bias));
        }
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(r, c)| r + c))
            .collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Scale(x, c), rg))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| ops::gelu(a)).collect())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Gelu(x), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.tanh()).collect())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Tanh(x), rg))
    }

    /// Selects first-axis slices of `x` (rows of a matrix, entries of a vector).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        let rows = shape[0];
        let row_len = v.numel() / rows;
        let mut out = Vec::with_capacity(idx.len() * row_len);
        for &i in idx {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(&v.data()[i * row_len..(i + 1) * row_len]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[0] = idx.len();
        let t = Tensor::new(new_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::GatherRows(x, idx.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, cols) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n || len == 0 {
            return Err(Error::Index {
                what: "slice_cols",
                index: start + len,
                len: n,
            });
        }
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&data[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, len, out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(self.shape_err("concat_cols", first, p));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row-wise softmax. Columns whose `key_mask` entry is false get
    /// probability exactly zero.
    pub fn softmax_rows(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.value(x).as_matrix_dims();
        if let Some(mask) = key_mask {
            if mask.len() != n || !mask.iter().any(|&k| k) {
                return Err(Error::Contract(format!(
                    "softmax mask must have {n} entries with at least one kept"
                )));
            }
        }
        let v = self.value(x);
        if v.data().iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("softmax_rows"));
        }
        let mut out = v.data().to_vec();
        for i in 0..m {
            ops::masked_softmax_row(&mut out[i * n..(i + 1) * n], key_mask);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SoftmaxRows(x), rg))
    }

    /// Layer normalization of every row of `x`.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.value(x).as_matrix_dims();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        let mut out = Vec::with_capacity(m * d);
        let mut xhat = Vec::with_capacity(m * d);
        let mut inv_std = Vec::with_capacity(m);
        {
            let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
            for i in 0..m {
                let (o, h, s) = ops::layer_norm_row(xv.row(i), g.data(), b.data(), eps);
                out.extend(o);
                xhat.extend(h);
                inv_std.push(s);
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let op = Op::LayerNormRows {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push(t, op, rg))
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (loss, probs) = ops::cross_entropy_slice(self.value(logits).data(), target)?;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// Mean of scalar nodes.
    pub fn mean_of(&mut self, scalars: &[Var]) -> Result<Var> {
        let (&first, rest) = scalars
            .split_first()
            .ok_or_else(|| Error::Contract("mean of no values".into()))?;
        let mut acc = first;
        for &s in rest {
            acc = self.add(acc, s)?;
        }
        self.scale(acc, 1.0 / scalars.len() as f64)
    }

    /// Forward `2x`, backward `3g`: a deliberately wrong rule for negative controls.
    #[cfg(test)]
    pub(crate) fn faulty_double(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| 2.0 * a).collect())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Faulty(x), rg))
    }

    /// Populates the gradient of every node reachable from `loss` that
    /// requires one. Gradients from repeated use of a node add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, c) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(buf) => buf.iter_mut().zip(&c).for_each(|(b, x)| *b += x),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).as_matrix_dims();
                let n = self.value(*b).shape()[1];
                if want(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, self.value(*b).data(), m, n, k, &mut da);
                    out.push((*a, da));
                }
                if want(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), g, m, k, n, &mut db);
                    out.push((*b, db));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).as_matrix_dims();
                let n = self.value(*b).shape()[0];
                if want(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nn(g, self.value(*b).data(), m, n, k, &mut da);
                    out.push((*a, da));
                }
                if want(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn(g, self.value(*a).data(), m, n, k, &mut db);
                    out.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::AddBias(x, b) => {
                out.push((*x, g.to_vec()));
                if want(*b) {
                    let n = self.value(*b).numel();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    out.push((*b, db));
                }
            }
            Op::Scale(x, c) => out.push((*x, g.iter().map(|v| v * c).collect())),
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                out.push((*x, g.iter().zip(xv).map(|(d, &a)| d * ops::gelu_grad(a)).collect()));
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                out.push((*x, g.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect()));
            }
            Op::GatherRows(x, idx) => {
                let xv = self.value(*x);
                let row_len = xv.numel() / xv.shape()[0];
                let mut dx = vec![0.0; xv.numel()];
                for (r, &src) in idx.iter().enumerate() {
                    let dst = &mut dx[src * row_len..(src + 1) * row_len];
                    dst.iter_mut()
                        .zip(&g[r * row_len..(r + 1) * row_len])
                        .for_each(|(d, v)| *d += v);
                }
                out.push((*x, dx));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if want(p) {
                        out.push((p, g[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).as_matrix_dims();
                let len = node.value.shape()[1];
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                out.push((*x, dx));
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.as_matrix_dims();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if want(p) {
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * n + col..r * n + col + w]);
                        }
                        out.push((p, dp));
                    }
                    col += w;
                }
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = node.value.as_matrix_dims();
                let p = node.value.data();
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let pr = &p[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let s = ops::dot(pr, gr);
                    for j in 0..n {
                        dx[r * n + j] = pr[j] * (gr[j] - s);
                    }
                }
                out.push((*x, dx));
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, d) = node.value.as_matrix_dims();
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; m * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..m {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        dx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                out.push((*x, dx));
                out.push((*gain, dgain));
                out.push((*bias, dbias));
            }
            Op::CrossEntropy { logits, target, probs } => {
                let mut dl: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                dl[*target] -= g[0];
                out.push((*logits, dl));
            }
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).numel()])),
            #[cfg(test)]
            Op::Faulty(x) => out.push((*x, g.iter().map(|v| 3.0 * v).collect())),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    #[test]
    fn sum_gives_unit_grads() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap(), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_of_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 1, vec![3.0]).unwrap(), true);
        let y = tape.matmul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_leaves_get_no_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![1., 2.]).unwrap(), true);
        let w = tape.leaf(Tensor::matrix(2, 1, vec![3., 4.]).unwrap(), false);
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn masked_softmax_zeroes_masked_keys() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.5, 9.0, 0.5]).unwrap(), true);
        let p = tape.softmax_rows(x, Some(&[true, false, true])).unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.0, 0.5]);
    }

    fn weighted_loss(tape: &mut Tape, x: Var, w: Var, alpha: f64, beta: f64) -> Var {
        // L1 = sum(tanh(x·w)), L2 = CE(x·w row 0, 1)
        let y = tape.matmul(x, w).unwrap();
        let t = tape.tanh(y).unwrap();
        let l1 = tape.sum(t).unwrap();
        let r = tape.gather_rows(y, &[0]).unwrap();
        let l2 = tape.cross_entropy(r, 1).unwrap();
        let a = tape.scale(l1, alpha).unwrap();
        let b = tape.scale(l2, beta).unwrap();
        tape.add(a, b).unwrap()
    }

    proptest! {
        #[test]
        fn backward_is_linear_in_the_loss(
            xs in proptest::collection::vec(-2.0f64..2.0, 6),
            ws in proptest::collection::vec(-2.0f64..2.0, 6),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let grads = |a: f64, b: f64| {
                let mut tape = Tape::new();
                let x = tape.leaf(Tensor::matrix(2, 3, xs.clone()).unwrap(), true);
                let w = tape.leaf(Tensor::matrix(3, 2, ws.clone()).unwrap(), true);
                let l = weighted_loss(&mut tape, x, w, a, b);
                tape.backward(l).unwrap();
                (tape.grad(x).unwrap().to_vec(), tape.grad(w).unwrap().to_vec())
            };
            let (cx, cw) = grads(alpha, beta);
            let (x1, w1) = grads(1.0, 0.0);
            let (x2, w2) = grads(0.0, 1.0);
            for i in 0..6 {
                prop_assert!((cx[i] - (alpha * x1[i] + beta * x2[i])).abs() < 1e-10);
                prop_assert!((cw[i] - (alpha * w1[i] + beta * w2[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn softmax_rows_normalized_and_shift_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..12),
            c in -1e3f64..1e3,
        ) {
            let n = xs.len();
            let mut tape = Tape::new();
            let a = tape.constant(Tensor::matrix(1, n, xs.clone()).unwrap());
            let b = tape.constant(Tensor::matrix(1, n, xs.iter().map(|x| x + c).collect()).unwrap());
            let pa = tape.softmax_rows(a, None).unwrap();
            let pb = tape.softmax_rows(b, None).unwrap();
            let sum: f64 = tape.value(pa).data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (u, v) in tape.value(pa).data().iter().zip(tape.value(pb).data()) {
                prop_assert!(*u > 0.0);
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
