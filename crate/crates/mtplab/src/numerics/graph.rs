//! Reverse-mode autodiff over a flat tape of ops.
//!
//! Nodes are appended in construction order, which is therefore already a
//! topological order; `backward` walks the tape in reverse. Every op checks
//! its output for non-finite values so numerical blowups surface at the op
//! that produced them, not three modules later.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::kernels::{self, AttnDims};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Transpose(NodeId),
    Matmul(NodeId, NodeId),
    Embedding { table: NodeId, ids: Arc<Vec<u32>> },
    Softmax(NodeId),
    RmsNorm { x: NodeId, weight: NodeId },
    Rope { x: NodeId, heads: usize, base: f64 },
    Silu(NodeId),
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize },
    CrossEntropy { logits: NodeId, targets: Arc<Vec<u32>>, mask: Arc<Vec<bool>> },
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    /// Extra forward results kept for the backward pass (softmax probs,
    /// rms-norm row norms, attention probabilities).
    saved: Option<Tensor<T>>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Inserts an input tensor. Parameters pass `requires_grad = true`;
    /// constants (token embedding inputs are handled by `embedding`) pass
    /// false and are pruned from the backward walk.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, None, requires_grad)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, saved: Option<Tensor<T>>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, saved, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn shape_err(op: &'static str, detail: String) -> Error {
        Error::Shape { op, detail }
    }

    // -- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        out.check_finite("add")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, None, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::shape_err("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        out.check_finite("mul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, None, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * c).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        out.check_finite("scale")?;
        let rg = self.rg(a);
        Ok(self.push(Op::Scale(a, c), out, None, rg))
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * sigmoid(x)).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        out.check_finite("silu")?;
        let rg = self.rg(a);
        Ok(self.push(Op::Silu(a), out, None, rg))
    }

    // -- shape ------------------------------------------------------------

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.ndim() != 2 {
            return Err(Self::shape_err("transpose", format!("need 2-d, got {:?}", va.shape())));
        }
        let (n, m) = (va.shape()[0], va.shape()[1]);
        let src = va.data();
        let mut data = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = src[i * m + j];
            }
        }
        let out = Tensor::from_vec(&[m, n], data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Transpose(a), out, None, rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), out, None, rg))
    }

    // -- linear algebra ---------------------------------------------------

    /// 2-d by 2-d matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Self::shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let data = kernels::matmul(va.data(), vb.data(), n, k, m);
        let out = Tensor::from_vec(&[n, m], data)?;
        out.check_finite("matmul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Matmul(a, b), out, None, rg))
    }

    /// Row lookup: `table` is (vocab, d), output is (ids.len(), d).
    pub fn embedding(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        let vt = self.value(table);
        if vt.ndim() != 2 {
            return Err(Self::shape_err("embedding", format!("table must be 2-d, got {:?}", vt.shape())));
        }
        let (vocab, d) = (vt.shape()[0], vt.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab) {
            return Err(Self::shape_err("embedding", format!("id {bad} out of range for vocab {vocab}")));
        }
        let src = vt.data();
        let mut data = vec![T::zero(); ids.len() * d];
        for (n, &t) in ids.iter().enumerate() {
            data[n * d..(n + 1) * d].copy_from_slice(&src[t as usize * d..(t as usize + 1) * d]);
        }
        let out = Tensor::from_vec(&[ids.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(Op::Embedding { table, ids: Arc::new(ids.to_vec()) }, out, None, rg))
    }

    // -- normalization and activation over rows ---------------------------

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.ndim() == 0 {
            return Err(Self::shape_err("softmax", "need at least 1-d".into()));
        }
        let width = *va.shape().last().unwrap();
        let rows = va.numel() / width;
        let data = kernels::softmax_rows(va.data(), rows, width);
        let out = Tensor::from_vec(va.shape(), data)?;
        out.check_finite("softmax")?;
        let rg = self.rg(a);
        Ok(self.push(Op::Softmax(a), out, None, rg))
    }

    /// RMS normalization over the last dimension with a learned gain:
    /// `y = x / sqrt(mean(x^2) + eps) * weight`.
    pub fn rms_norm(&mut self, x: NodeId, weight: NodeId, eps: f64) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(weight));
        if vx.ndim() == 0 || vw.ndim() != 1 || vw.shape()[0] != *vx.shape().last().unwrap() {
            return Err(Self::shape_err(
                "rms_norm",
                format!("x {:?} with weight {:?}", vx.shape(), vw.shape()),
            ));
        }
        let d = vw.shape()[0];
        let rows = vx.numel() / d;
        let (src, w) = (vx.data(), vw.data());
        let epst = T::from_f64(eps);
        let dt = T::from_f64(d as f64);
        let mut data = vec![T::zero(); rows * d];
        let mut norms = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mut ss = T::zero();
            for &v in row {
                ss += v * v;
            }
            let rms = (ss / dt + epst).sqrt();
            norms[r] = rms;
            for j in 0..d {
                data[r * d + j] = row[j] / rms * w[j];
            }
        }
        let out = Tensor::from_vec(vx.shape(), data)?;
        out.check_finite("rms_norm")?;
        let saved = Tensor::from_vec(&[rows], norms)?;
        let rg = self.rg(x) || self.rg(weight);
        Ok(self.push(Op::RmsNorm { x, weight }, out, Some(saved), rg))
    }

    /// Rotary position embedding on a (batch, t, heads*hd) tensor.
    /// Within each head, consecutive pairs (2j, 2j+1) rotate by
    /// `t * base^(-2j/hd)`.
    pub fn rope(&mut self, x: NodeId, heads: usize, base: f64) -> Result<NodeId> {
        let vx = self.value(x);
        let dims = rope_dims(vx.shape(), heads)?;
        let data = rope_apply(vx.data(), dims, base, false);
        let out = Tensor::from_vec(vx.shape(), data)?;
        out.check_finite("rope")?;
        let rg = self.rg(x);
        Ok(self.push(Op::Rope { x, heads, base }, out, None, rg))
    }

    /// Fused causal multi-head self-attention over (batch, t, heads*hd)
    /// projections; scores are scaled by 1/sqrt(hd).
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> Result<NodeId> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        if vq.shape() != vk.shape() || vq.shape() != vv.shape() {
            return Err(Self::shape_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?} must match", vq.shape(), vk.shape(), vv.shape()),
            ));
        }
        if vq.ndim() != 3 || vq.shape()[2] % heads != 0 {
            return Err(Self::shape_err(
                "attention",
                format!("{:?} not splittable into {} heads", vq.shape(), heads),
            ));
        }
        let dims = AttnDims {
            batch: vq.shape()[0],
            heads,
            t: vq.shape()[1],
            hd: vq.shape()[2] / heads,
        };
        let (out, probs) = kernels::attention_forward(vq.data(), vk.data(), vv.data(), dims);
        let out = Tensor::from_vec(vq.shape(), out)?;
        out.check_finite("attention")?;
        let saved = Tensor::from_vec(&[dims.batch, heads, dims.t, dims.t], probs)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(Op::Attention { q, k, v, heads }, out, Some(saved), rg))
    }

    // -- losses and reductions --------------------------------------------

    /// Mean negative log-likelihood over unmasked rows of (n, vocab) logits.
    /// `mask[i] = false` drops row i from the mean. Errors if every row is
    /// masked.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[u32], mask: Option<&[bool]>) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.ndim() != 2 || vl.shape()[0] != targets.len() {
            return Err(Self::shape_err(
                "cross_entropy",
                format!("logits {:?} with {} targets", vl.shape(), targets.len()),
            ));
        }
        let (n, vocab) = (vl.shape()[0], vl.shape()[1]);
        let mask: Vec<bool> = match mask {
            Some(m) => {
                if m.len() != n {
                    return Err(Self::shape_err(
                        "cross_entropy",
                        format!("mask length {} for {} rows", m.len(), n),
                    ));
                }
                m.to_vec()
            }
            None => vec![true; n],
        };
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= vocab) {
            return Err(Self::shape_err("cross_entropy", format!("target {bad} out of range for vocab {vocab}")));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::invalid("cross_entropy: every position is masked"));
        }
        let src = vl.data();
        let mut probs = vec![T::zero(); n * vocab];
        let mut total = T::zero();
        for r in 0..n {
            let row = &src[r * vocab..(r + 1) * vocab];
            let mut max = row[0];
            for &v in &row[1..] {
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for (p, &v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                let e = (v - max).exp();
                *p = e;
                sum += e;
            }
            for p in probs[r * vocab..(r + 1) * vocab].iter_mut() {
                *p = *p / sum;
            }
            if mask[r] {
                let lse = max + sum.ln();
                total += lse - row[targets[r] as usize];
            }
        }
        let loss = total / T::from_f64(count as f64);
        let out = Tensor::scalar(loss);
        out.check_finite("cross_entropy")?;
        let saved = Tensor::from_vec(&[n, vocab], probs)?;
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropy { logits, targets: Arc::new(targets.to_vec()), mask: Arc::new(mask) },
            out,
            Some(saved),
            rg,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let total: T = va.data().iter().copied().sum();
        let out = Tensor::scalar(total);
        out.check_finite("sum")?;
        let rg = self.rg(a);
        Ok(self.push(Op::Sum(a), out, None, rg))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.numel() == 0 {
            return Err(Error::invalid("mean: empty tensor"));
        }
        let total: T = va.data().iter().copied().sum();
        let out = Tensor::scalar(total / T::from_f64(va.numel() as f64));
        out.check_finite("mean")?;
        let rg = self.rg(a);
        Ok(self.push(Op::Mean(a), out, None, rg))
    }

    // -- backward ---------------------------------------------------------

    /// Gradients of a scalar `loss` with respect to every `requires_grad`
    /// node reachable from it. Unreached nodes report no gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(self.value(loss).shape(), vec![T::one()])?);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads)?;
            // Leaves keep their accumulated gradient; interior grads are
            // dropped once consumed to bound memory.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let vb = self.value(*b);
                    let data = g.data().iter().zip(vb.data()).map(|(&gv, &bv)| gv * bv).collect();
                    self.accum(grads, *a, Tensor::from_vec(g.shape(), data)?)?;
                }
                if self.rg(*b) {
                    let va = self.value(*a);
                    let data = g.data().iter().zip(va.data()).map(|(&gv, &av)| gv * av).collect();
                    self.accum(grads, *b, Tensor::from_vec(g.shape(), data)?)?;
                }
            }
            Op::Scale(a, c) => {
                let data = g.data().iter().map(|&gv| gv * *c).collect();
                self.accum(grads, *a, Tensor::from_vec(g.shape(), data)?)?;
            }
            Op::Silu(a) => {
                let vx = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gv, &x)| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (T::one() - s))
                    })
                    .collect();
                self.accum(grads, *a, Tensor::from_vec(vx.shape(), data)?)?;
            }
            Op::Transpose(a) => {
                let (m, n) = (g.shape()[0], g.shape()[1]);
                let src = g.data();
                let mut data = vec![T::zero(); n * m];
                for i2 in 0..m {
                    for j in 0..n {
                        data[j * m + i2] = src[i2 * n + j];
                    }
                }
                self.accum(grads, *a, Tensor::from_vec(&[n, m], data)?)?;
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.rg(*a) {
                    let da = kernels::matmul_bt(g.data(), vb.data(), n, k, m);
                    self.accum(grads, *a, Tensor::from_vec(&[n, k], da)?)?;
                }
                if self.rg(*b) {
                    let db = kernels::matmul_at(va.data(), g.data(), n, k, m);
                    self.accum(grads, *b, Tensor::from_vec(&[k, m], db)?)?;
                }
            }
            Op::Embedding { table, ids } => {
                let vt = self.value(*table);
                let (vocab, d) = (vt.shape()[0], vt.shape()[1]);
                let mut dt = vec![T::zero(); vocab * d];
                for (row, &t) in ids.iter().enumerate() {
                    let dst = &mut dt[t as usize * d..(t as usize + 1) * d];
                    let src = &g.data()[row * d..(row + 1) * d];
                    for j in 0..d {
                        dst[j] += src[j];
                    }
                }
                self.accum(grads, *table, Tensor::from_vec(&[vocab, d], dt)?)?;
            }
            Op::Softmax(a) => {
                let p = node.value.data();
                let width = *node.value.shape().last().unwrap();
                let rows = node.value.numel() / width;
                let mut dx = vec![T::zero(); p.len()];
                for r in 0..rows {
                    let pr = &p[r * width..(r + 1) * width];
                    let gr = &g.data()[r * width..(r + 1) * width];
                    let mut inner = T::zero();
                    for j in 0..width {
                        inner += gr[j] * pr[j];
                    }
                    for j in 0..width {
                        dx[r * width + j] = pr[j] * (gr[j] - inner);
                    }
                }
                self.accum(grads, *a, Tensor::from_vec(node.value.shape(), dx)?)?;
            }
            Op::RmsNorm { x, weight } => {
                let vx = self.value(*x);
                let vw = self.value(*weight);
                let d = vw.shape()[0];
                let rows = vx.numel() / d;
                let norms = node.saved.as_ref().expect("rms_norm saved norms").data();
                let (xs, ws) = (vx.data(), vw.data());
                let dt = T::from_f64(d as f64);
                let mut dx = vec![T::zero(); xs.len()];
                let mut dw = vec![T::zero(); d];
                for r in 0..rows {
                    let xr = &xs[r * d..(r + 1) * d];
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let rms = norms[r];
                    let mut s = T::zero();
                    for j in 0..d {
                        s += gr[j] * ws[j] * xr[j];
                    }
                    let denom = dt * rms * rms * rms;
                    for j in 0..d {
                        dx[r * d + j] = gr[j] * ws[j] / rms - xr[j] * s / denom;
                        dw[j] += gr[j] * xr[j] / rms;
                    }
                }
                if self.rg(*x) {
                    self.accum(grads, *x, Tensor::from_vec(vx.shape(), dx)?)?;
                }
                if self.rg(*weight) {
                    self.accum(grads, *weight, Tensor::from_vec(&[d], dw)?)?;
                }
            }
            Op::Rope { x, heads, base } => {
                let vx = self.value(*x);
                let dims = rope_dims(vx.shape(), *heads)?;
                let dx = rope_apply(g.data(), dims, *base, true);
                self.accum(grads, *x, Tensor::from_vec(vx.shape(), dx)?)?;
            }
            Op::Attention { q, k, v, heads } => {
                let (vq, vk, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let dims = AttnDims {
                    batch: vq.shape()[0],
                    heads: *heads,
                    t: vq.shape()[1],
                    hd: vq.shape()[2] / heads,
                };
                let probs = node.saved.as_ref().expect("attention saved probs").data();
                let (dq, dk, dv) =
                    kernels::attention_backward(vq.data(), vk.data(), vv.data(), probs, g.data(), dims);
                if self.rg(*q) {
                    self.accum(grads, *q, Tensor::from_vec(vq.shape(), dq)?)?;
                }
                if self.rg(*k) {
                    self.accum(grads, *k, Tensor::from_vec(vk.shape(), dk)?)?;
                }
                if self.rg(*v) {
                    self.accum(grads, *v, Tensor::from_vec(vv.shape(), dv)?)?;
                }
            }
            Op::CrossEntropy { logits, targets, mask } => {
                let vl = self.value(*logits);
                let (n, vocab) = (vl.shape()[0], vl.shape()[1]);
                let probs = node.saved.as_ref().expect("cross_entropy saved probs").data();
                let count = mask.iter().filter(|&&m| m).count();
                let gscale = g.item()? / T::from_f64(count as f64);
                let mut dl = vec![T::zero(); n * vocab];
                for r in 0..n {
                    if !mask[r] {
                        continue;
                    }
                    let pr = &probs[r * vocab..(r + 1) * vocab];
                    let dr = &mut dl[r * vocab..(r + 1) * vocab];
                    for j in 0..vocab {
                        dr[j] = pr[j] * gscale;
                    }
                    dr[targets[r] as usize] -= gscale;
                }
                self.accum(grads, *logits, Tensor::from_vec(&[n, vocab], dl)?)?;
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                self.accum(grads, *a, Tensor::full(self.value(*a).shape(), gv))?;
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let gv = g.item()? / T::from_f64(va.numel() as f64);
                self.accum(grads, *a, Tensor::full(va.shape(), gv))?;
            }
            Op::Reshape(a) => {
                self.accum(grads, *a, g.reshape(self.value(*a).shape())?)?;
            }
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) -> Result<()> {
        if !self.rg(id) {
            return Ok(());
        }
        delta.check_finite("backward")?;
        match &mut grads[id.0] {
            Some(existing) => {
                let dst = existing.make_mut();
                for (d, &s) in dst.iter_mut().zip(delta.data()) {
                    *d += s;
                }
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`]: per-node gradient slots.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads[id.0].take()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Clone, Copy)]
struct RopeDims {
    batch: usize,
    t: usize,
    heads: usize,
    hd: usize,
}

fn rope_dims(shape: &[usize], heads: usize) -> Result<RopeDims> {
    if shape.len() != 3 || heads == 0 || shape[2] % heads != 0 || (shape[2] / heads) % 2 != 0 {
        return Err(Error::Shape {
            op: "rope",
            detail: format!("{:?} with {} heads (head dim must be even)", shape, heads),
        });
    }
    Ok(RopeDims { batch: shape[0], t: shape[1], heads, hd: shape[2] / heads })
}

/// Applies the pairwise rotation; `inverse` rotates by the negated angle,
/// which is exactly the transpose used in the backward pass.
fn rope_apply<T: Scalar>(src: &[T], dims: RopeDims, base: f64, inverse: bool) -> Vec<T> {
    let RopeDims { batch, t, heads, hd } = dims;
    let d = heads * hd;
    let half = hd / 2;
    // cos/sin tables per (position, pair), computed in f64 and cast once.
    let mut cos_t = vec![T::zero(); t * half];
    let mut sin_t = vec![T::zero(); t * half];
    for ti in 0..t {
        for j in 0..half {
            let theta = base.powf(-2.0 * j as f64 / hd as f64);
            let ang = ti as f64 * theta;
            let (s, c) = ang.sin_cos();
            cos_t[ti * half + j] = T::from_f64(c);
            sin_t[ti * half + j] = T::from_f64(if inverse { -s } else { s });
        }
    }
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        for ti in 0..t {
            let row = (b * t + ti) * d;
            for h in 0..heads {
                let off = row + h * hd;
                for j in 0..half {
                    let (c, s) = (cos_t[ti * half + j], sin_t[ti * half + j]);
                    let x0 = src[off + 2 * j];
                    let x1 = src[off + 2 * j + 1];
                    out[off + 2 * j] = x0 * c - x1 * s;
                    out[off + 2 * j + 1] = x0 * s + x1 * c;
                }
            }
        }
    }
    out
}
