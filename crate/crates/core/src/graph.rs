//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Graph`] is a build-as-you-go tape: every op appends a node holding the
//! forward value and enough information to replay its local gradient rule.
//! One [`Graph::backward`] pass walks the tape in reverse and accumulates
//! gradients additively, so a tensor used twice receives the sum of both
//! path gradients.

use crate::error::{Error, Result};
use crate::tensor::{broadcast_index, broadcast_shape, pad_shape, reduce_to_shape, Tensor};
use rand::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { lhs: TensorId, rhs: TensorId },
    Add { lhs: TensorId, rhs: TensorId },
    Mul { lhs: TensorId, rhs: TensorId },
    Scale { input: TensorId, factor: f64 },
    Relu { input: TensorId },
    Gelu { input: TensorId },
    Sigmoid { input: TensorId },
    Log { input: TensorId },
    Softmax { input: TensorId },
    LayerNorm { input: TensorId, gamma: TensorId, beta: TensorId },
    Embedding { weight: TensorId, ids: Vec<usize> },
    Mean { input: TensorId },
    MeanAxis { input: TensorId, axis: usize },
    Sum { input: TensorId },
    Concat { inputs: Vec<TensorId>, axis: usize },
    Reshape { input: TensorId },
    Permute { input: TensorId, axes: Vec<usize> },
    PoolFirst { input: TensorId },
    Dropout { input: TensorId, mask: Vec<f64> },
    BceWithLogits { logits: TensorId, targets: Vec<f64> },
    MaskedCrossEntropy { logits: TensorId, rows: Vec<usize>, targets: Vec<usize> },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, inputs: &[&[f64]]) -> Result<()> {
    for slice in inputs {
        if slice.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
    }
    Ok(())
}

/// Plain 2D matrix multiply C[m,n] = A[m,k] B[k,n], accumulated into `out`.
fn matmul_2d_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] += av * row[j];
            }
        }
    }
}

fn gelu_value(x: f64) -> f64 {
    // tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = c * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Scalar value of a one-element node.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, needs_grad: bool, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { data, shape, needs_grad, grad: None, op });
        id
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf initialized from an external tensor; `requires_grad` is taken
    /// from the tensor.
    pub fn leaf(&mut self, tensor: &Tensor) -> Result<TensorId> {
        self.leaf_from(tensor.shape.clone(), tensor.data.clone(), tensor.requires_grad)
    }

    pub fn leaf_from(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        check_finite("leaf", &[&data])?;
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorId> {
        self.leaf_from(shape, data, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<TensorId> {
        self.leaf_from(vec![1], vec![value], false)
    }

    // ── Binary ops ──────────────────────────────────────────────────────

    /// Batched matrix multiply. Both operands must have at least 2 dims;
    /// trailing [m,k]x[k,n] multiply with numpy broadcast over the leading
    /// batch axes.
    pub fn matmul(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let ls = self.shape(lhs).to_vec();
        let rs = self.shape(rhs).to_vec();
        if ls.len() < 2 || rs.len() < 2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: ls, rhs: rs });
        }
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        if k != k2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: ls, rhs: rs });
        }
        let batch = broadcast_shape("matmul", &ls[..ls.len() - 2], &rs[..rs.len() - 2])?;
        check_finite("matmul", &[self.data(lhs), self.data(rhs)])?;

        let n_batch: usize = batch.iter().product();
        let lhs_batch = pad_shape(&ls[..ls.len() - 2], batch.len());
        let rhs_batch = pad_shape(&rs[..rs.len() - 2], batch.len());
        let mut data = vec![0.0; n_batch * m * n];
        for b in 0..n_batch {
            let li = broadcast_index(b, &batch, &lhs_batch) * m * k;
            let ri = broadcast_index(b, &batch, &rhs_batch) * k * n;
            let a = &self.nodes[lhs.0].data[li..li + m * k];
            let bm = &self.nodes[rhs.0].data[ri..ri + k * n];
            let mut out = vec![0.0; m * n];
            matmul_2d_acc(a, bm, &mut out, m, k, n);
            data[b * m * n..(b + 1) * m * n].copy_from_slice(&out);
        }
        let mut shape = batch;
        shape.push(m);
        shape.push(n);
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(data, shape, needs, Op::MatMul { lhs, rhs }))
    }

    pub fn add(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        self.broadcast_binary("add", lhs, rhs, |a, b| a + b, Op::Add { lhs, rhs })
    }

    pub fn mul(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        self.broadcast_binary("mul", lhs, rhs, |a, b| a * b, Op::Mul { lhs, rhs })
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        lhs: TensorId,
        rhs: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let ls = self.shape(lhs).to_vec();
        let rs = self.shape(rhs).to_vec();
        let out_shape = broadcast_shape(name, &ls, &rs)?;
        check_finite(name, &[self.data(lhs), self.data(rhs)])?;
        let numel: usize = out_shape.iter().product();
        let pl = pad_shape(&ls, out_shape.len());
        let pr = pad_shape(&rs, out_shape.len());
        let mut data = vec![0.0; numel];
        for (i, slot) in data.iter_mut().enumerate() {
            let a = self.nodes[lhs.0].data[broadcast_index(i, &out_shape, &pl)];
            let b = self.nodes[rhs.0].data[broadcast_index(i, &out_shape, &pr)];
            *slot = f(a, b);
        }
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(data, out_shape, needs, op))
    }

    // ── Elementwise unary ops ───────────────────────────────────────────

    pub fn scale(&mut self, input: TensorId, factor: f64) -> Result<TensorId> {
        if !factor.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        self.unary("scale", input, |x| factor * x, Op::Scale { input, factor })
    }

    pub fn relu(&mut self, input: TensorId) -> Result<TensorId> {
        self.unary("relu", input, |x| x.max(0.0), Op::Relu { input })
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, input: TensorId) -> Result<TensorId> {
        self.unary("gelu", input, gelu_value, Op::Gelu { input })
    }

    pub fn sigmoid(&mut self, input: TensorId) -> Result<TensorId> {
        self.unary("sigmoid", input, sigmoid_scalar, Op::Sigmoid { input })
    }

    pub fn log(&mut self, input: TensorId) -> Result<TensorId> {
        self.unary("log", input, |x| x.ln(), Op::Log { input })
    }

    fn unary(
        &mut self,
        name: &'static str,
        input: TensorId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        check_finite(name, &[self.data(input)])?;
        let data: Vec<f64> = self.nodes[input.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[input.0].shape.clone();
        let needs = self.needs(input);
        Ok(self.push(data, shape, needs, op))
    }

    // ── Normalization / attention building blocks ───────────────────────

    /// Softmax over the last axis, with rowwise max subtracted before
    /// exponentiation.
    pub fn softmax(&mut self, input: TensorId) -> Result<TensorId> {
        check_finite("softmax", &[self.data(input)])?;
        let shape = self.shape(input).to_vec();
        let d = *shape.last().ok_or_else(|| Error::invalid("softmax on 0-dim tensor"))?;
        let src = &self.nodes[input.0].data;
        let mut data = vec![0.0; src.len()];
        for row in 0..src.len() / d {
            let s = &src[row * d..(row + 1) * d];
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..d {
                let e = (s[j] - max).exp();
                data[row * d + j] = e;
                sum += e;
            }
            for j in 0..d {
                data[row * d + j] /= sum;
            }
        }
        let needs = self.needs(input);
        Ok(self.push(data, shape, needs, Op::Softmax { input }))
    }

    /// Layer normalization over the last axis with learnable scale and
    /// shift; variance is clamped by `LAYER_NORM_EPS`.
    pub fn layer_norm(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
    ) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        let d = *shape.last().ok_or_else(|| Error::invalid("layer_norm on 0-dim tensor"))?;
        if self.shape(gamma) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm(gamma)",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        if self.shape(beta) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm(beta)",
                lhs: shape,
                rhs: self.shape(beta).to_vec(),
            });
        }
        check_finite("layer_norm", &[self.data(input), self.data(gamma), self.data(beta)])?;
        let src = &self.nodes[input.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut data = vec![0.0; src.len()];
        for row in 0..src.len() / d {
            let s = &src[row * d..(row + 1) * d];
            let mean = s.iter().sum::<f64>() / d as f64;
            let var = s.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                data[row * d + j] = (s[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(data, shape, needs, Op::LayerNorm { input, gamma, beta }))
    }

    /// Row lookup into a 2D weight: output shape is `id_shape ++ [d]`.
    pub fn embedding(
        &mut self,
        weight: TensorId,
        ids: &[usize],
        id_shape: &[usize],
    ) -> Result<TensorId> {
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 {
            return Err(Error::invalid(format!("embedding weight must be 2D, got {:?}", ws)));
        }
        let id_numel: usize = id_shape.iter().product();
        if id_numel != ids.len() {
            return Err(Error::invalid(format!(
                "embedding id count {} does not match id shape {:?}",
                ids.len(),
                id_shape
            )));
        }
        let (rows, d) = (ws[0], ws[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!(
                "embedding id {} out of range for {} rows",
                bad, rows
            )));
        }
        check_finite("embedding", &[self.data(weight)])?;
        let mut data = vec![0.0; ids.len() * d];
        for (pos, &id) in ids.iter().enumerate() {
            data[pos * d..(pos + 1) * d]
                .copy_from_slice(&self.nodes[weight.0].data[id * d..(id + 1) * d]);
        }
        let mut shape = id_shape.to_vec();
        shape.push(d);
        let needs = self.needs(weight);
        Ok(self.push(data, shape, needs, Op::Embedding { weight, ids: ids.to_vec() }))
    }

    // ── Reductions ──────────────────────────────────────────────────────

    /// Mean over all elements, producing a scalar of shape [1].
    pub fn mean_all(&mut self, input: TensorId) -> Result<TensorId> {
        check_finite("mean", &[self.data(input)])?;
        let n = self.nodes[input.0].data.len() as f64;
        let s: f64 = self.nodes[input.0].data.iter().sum();
        let needs = self.needs(input);
        Ok(self.push(vec![s / n], vec![1], needs, Op::Mean { input }))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, input: TensorId, axis: usize) -> Result<TensorId> {
        check_finite("mean_axis", &[self.data(input)])?;
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "mean_axis axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let axis_len = shape[axis] as f64;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..shape[axis] {
                for i in 0..inner {
                    data[o * inner + i] +=
                        self.nodes[input.0].data[o * shape[axis] * inner + a * inner + i] / axis_len;
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(data, out_shape, needs, Op::MeanAxis { input, axis }))
    }

    /// Sum of all elements, producing a scalar of shape [1].
    pub fn sum_all(&mut self, input: TensorId) -> Result<TensorId> {
        check_finite("sum", &[self.data(input)])?;
        let s: f64 = self.nodes[input.0].data.iter().sum();
        let needs = self.needs(input);
        Ok(self.push(vec![s], vec![1], needs, Op::Sum { input }))
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    pub fn concat(&mut self, inputs: &[TensorId], axis: usize) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(format!(
                "concat axis {} out of range for shape {:?}",
                axis, first
            )));
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != first.len()
                || s.iter().zip(first.iter()).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            check_finite("concat", &[self.data(id)])?;
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        for &id in inputs {
            let s_axis = self.shape(id)[axis];
            for o in 0..outer {
                let src_start = o * s_axis * inner;
                let dst_start = o * axis_total * inner + offset * inner;
                let chunk = s_axis * inner;
                data[dst_start..dst_start + chunk]
                    .copy_from_slice(&self.nodes[id.0].data[src_start..src_start + chunk]);
            }
            offset += s_axis;
        }
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(data, out_shape, needs, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn reshape(&mut self, input: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.nodes[input.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(input).to_vec(),
                rhs: new_shape,
            });
        }
        let data = self.nodes[input.0].data.clone();
        let needs = self.needs(input);
        Ok(self.push(data, new_shape, needs, Op::Reshape { input }))
    }

    /// Axis permutation; `axes` must be a permutation of 0..ndim.
    pub fn permute(&mut self, input: TensorId, axes: &[usize]) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        let ndim = shape.len();
        let mut seen = vec![false; ndim];
        if axes.len() != ndim || axes.iter().any(|&a| a >= ndim || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(format!(
                "permute axes {:?} is not a permutation of 0..{}",
                axes, ndim
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let in_strides = crate::tensor::strides(&shape);
        let data = permute_data(&self.nodes[input.0].data, &out_shape, axes, &in_strides);
        let needs = self.needs(input);
        Ok(self.push(data, out_shape, needs, Op::Permute { input, axes: axes.to_vec() }))
    }

    /// 2D transpose convenience.
    pub fn transpose(&mut self, input: TensorId) -> Result<TensorId> {
        let ndim = self.shape(input).len();
        if ndim != 2 {
            return Err(Error::invalid(format!("transpose expects 2D, got {} dims", ndim)));
        }
        self.permute(input, &[1, 0])
    }

    /// Select position 0 along axis 1 of a 3D tensor: [b, s, d] -> [b, d].
    pub fn pool_first(&mut self, input: TensorId) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 3 {
            return Err(Error::invalid(format!("pool_first expects 3D input, got {:?}", shape)));
        }
        check_finite("pool_first", &[self.data(input)])?;
        let (b, s, d) = (shape[0], shape[1], shape[2]);
        let mut data = vec![0.0; b * d];
        for i in 0..b {
            data[i * d..(i + 1) * d]
                .copy_from_slice(&self.nodes[input.0].data[i * s * d..i * s * d + d]);
        }
        let needs = self.needs(input);
        Ok(self.push(data, vec![b, d], needs, Op::PoolFirst { input }))
    }

    /// Inverted dropout: kept entries are scaled by 1/(1-rate).
    pub fn dropout(&mut self, input: TensorId, rate: f64, rng: &mut impl Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0,1)", rate)));
        }
        if rate == 0.0 {
            return Ok(input);
        }
        check_finite("dropout", &[self.data(input)])?;
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.nodes[input.0].data.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data: Vec<f64> = self.nodes[input.0]
            .data
            .iter()
            .zip(mask.iter())
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(input).to_vec();
        let needs = self.needs(input);
        Ok(self.push(data, shape, needs, Op::Dropout { input, mask }))
    }

    // ── Fused losses ────────────────────────────────────────────────────

    /// Mean binary cross-entropy from logits over all entries, computed in
    /// the stable form `max(z,0) - z y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: &[f64]) -> Result<TensorId> {
        let n = self.nodes[logits.0].data.len();
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::invalid("bce_with_logits targets must be 0 or 1"));
        }
        check_finite("bce_with_logits", &[self.data(logits)])?;
        let mut total = 0.0;
        for (&z, &y) in self.nodes[logits.0].data.iter().zip(targets) {
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let needs = self.needs(logits);
        Ok(self.push(
            vec![total / n as f64],
            vec![1],
            needs,
            Op::BceWithLogits { logits, targets: targets.to_vec() },
        ))
    }

    /// Mean negative log-softmax of `targets[i]` over the selected rows of a
    /// logits tensor whose last axis is the class axis. `rows` are flat row
    /// indices after collapsing all leading axes.
    pub fn masked_cross_entropy(
        &mut self,
        logits: TensorId,
        rows: &[usize],
        targets: &[usize],
    ) -> Result<TensorId> {
        let shape = self.shape(logits).to_vec();
        let v = *shape.last().ok_or_else(|| Error::invalid("cross entropy on 0-dim tensor"))?;
        let n_rows = self.nodes[logits.0].data.len() / v;
        if rows.len() != targets.len() {
            return Err(Error::invalid("cross entropy rows/targets length mismatch"));
        }
        if rows.is_empty() {
            return Err(Error::invalid("cross entropy over zero target positions"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::invalid(format!("cross entropy row {} out of range", bad)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::invalid(format!("cross entropy target {} out of range", bad)));
        }
        check_finite("masked_cross_entropy", &[self.data(logits)])?;
        let mut total = 0.0;
        for (&r, &t) in rows.iter().zip(targets) {
            let row = &self.nodes[logits.0].data[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            total -= row[t] - lse;
        }
        let needs = self.needs(logits);
        Ok(self.push(
            vec![total / rows.len() as f64],
            vec![1],
            needs,
            Op::MaskedCrossEntropy { logits, rows: rows.to_vec(), targets: targets.to_vec() },
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients of nodes that do not need
    /// them are skipped; the loss's own gradient is 1.0.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].data[0].is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad && i != loss.0 {
                continue;
            }
            let grad = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue, // not reachable from the loss
            };
            let op = self.nodes[i].op.clone();
            self.backward_node(TensorId(i), &grad, &op);
        }
        Ok(())
    }

    fn acc_grad(&mut self, id: TensorId, src: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let len = self.nodes[id.0].data.len();
        let grad = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, s) in grad.iter_mut().zip(src) {
            *g += s;
        }
    }

    fn backward_node(&mut self, out: TensorId, grad: &[f64], op: &Op) {
        match op {
            Op::Leaf => {}

            Op::MatMul { lhs, rhs } => {
                let ls = self.shape(*lhs).to_vec();
                let rs = self.shape(*rhs).to_vec();
                let os = self.shape(out).to_vec();
                let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
                let n = rs[rs.len() - 1];
                let batch = os[..os.len() - 2].to_vec();
                let n_batch: usize = batch.iter().product();
                let lhs_batch = pad_shape(&ls[..ls.len() - 2], batch.len());
                let rhs_batch = pad_shape(&rs[..rs.len() - 2], batch.len());

                let mut dl = vec![0.0; self.nodes[lhs.0].data.len()];
                let mut dr = vec![0.0; self.nodes[rhs.0].data.len()];
                for b in 0..n_batch {
                    let li = broadcast_index(b, &batch, &lhs_batch) * m * k;
                    let ri = broadcast_index(b, &batch, &rhs_batch) * k * n;
                    let g = &grad[b * m * n..(b + 1) * m * n];
                    if self.needs(*lhs) {
                        // dA += G B^T
                        let bm = &self.nodes[rhs.0].data[ri..ri + k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bm[p * n + j];
                                }
                                dl[li + i * k + p] += s;
                            }
                        }
                    }
                    if self.needs(*rhs) {
                        // dB += A^T G
                        let am = &self.nodes[lhs.0].data[li..li + m * k];
                        for p in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += am[i * k + p] * g[i * n + j];
                                }
                                dr[ri + p * n + j] += s;
                            }
                        }
                    }
                }
                self.acc_grad(*lhs, &dl);
                self.acc_grad(*rhs, &dr);
            }

            Op::Add { lhs, rhs } => {
                let os = self.shape(out).to_vec();
                if self.needs(*lhs) {
                    let d = reduce_to_shape(grad, &os, &self.shape(*lhs).to_vec());
                    self.acc_grad(*lhs, &d);
                }
                if self.needs(*rhs) {
                    let d = reduce_to_shape(grad, &os, &self.shape(*rhs).to_vec());
                    self.acc_grad(*rhs, &d);
                }
            }

            Op::Mul { lhs, rhs } => {
                let os = self.shape(out).to_vec();
                let pl = pad_shape(self.shape(*lhs), os.len());
                let pr = pad_shape(self.shape(*rhs), os.len());
                if self.needs(*lhs) {
                    let full: Vec<f64> = grad
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * self.nodes[rhs.0].data[broadcast_index(i, &os, &pr)])
                        .collect();
                    let d = reduce_to_shape(&full, &os, &self.shape(*lhs).to_vec());
                    self.acc_grad(*lhs, &d);
                }
                if self.needs(*rhs) {
                    let full: Vec<f64> = grad
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * self.nodes[lhs.0].data[broadcast_index(i, &os, &pl)])
                        .collect();
                    let d = reduce_to_shape(&full, &os, &self.shape(*rhs).to_vec());
                    self.acc_grad(*rhs, &d);
                }
            }

            Op::Scale { input, factor } => {
                let d: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                self.acc_grad(*input, &d);
            }

            Op::Relu { input } => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.nodes[input.0].data.iter())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.acc_grad(*input, &d);
            }

            Op::Gelu { input } => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.nodes[input.0].data.iter())
                    .map(|(g, &x)| g * gelu_derivative(x))
                    .collect();
                self.acc_grad(*input, &d);
            }

            Op::Sigmoid { input } => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.nodes[out.0].data.iter())
                    .map(|(g, &s)| g * s * (1.0 - s))
                    .collect();
                self.acc_grad(*input, &d);
            }

            Op::Log { input } => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.nodes[input.0].data.iter())
                    .map(|(g, &x)| g / x)
                    .collect();
                self.acc_grad(*input, &d);
            }

            Op::Softmax { input } => {
                let shape = self.shape(out).to_vec();
                let d = *shape.last().unwrap();
                let s = &self.nodes[out.0].data;
                let mut dg = vec![0.0; s.len()];
                for row in 0..s.len() / d {
                    let base = row * d;
                    let dot: f64 =
                        (0..d).map(|j| grad[base + j] * s[base + j]).sum();
                    for j in 0..d {
                        dg[base + j] = s[base + j] * (grad[base + j] - dot);
                    }
                }
                self.acc_grad(*input, &dg);
            }

            Op::LayerNorm { input, gamma, beta } => {
                let shape = self.shape(out).to_vec();
                let d = *shape.last().unwrap();
                let x = self.nodes[input.0].data.clone();
                let g_data = self.nodes[gamma.0].data.clone();
                let rows = x.len() / d;
                let mut dx = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for row in 0..rows {
                    let xs = &x[row * d..(row + 1) * d];
                    let gs = &grad[row * d..(row + 1) * d];
                    let mean = xs.iter().sum::<f64>() / d as f64;
                    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = xs.iter().map(|&v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = gs.iter().zip(g_data.iter()).map(|(g, gm)| g * gm).collect();
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 =
                        dxhat.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum();
                    let df = d as f64;
                    for j in 0..d {
                        dgamma[j] += gs[j] * xhat[j];
                        dbeta[j] += gs[j];
                        dx[row * d + j] =
                            inv_std / df * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.acc_grad(*input, &dx);
                self.acc_grad(*gamma, &dgamma);
                self.acc_grad(*beta, &dbeta);
            }

            Op::Embedding { weight, ids } => {
                if self.needs(*weight) {
                    let d = self.shape(*weight)[1];
                    let mut dw = vec![0.0; self.nodes[weight.0].data.len()];
                    for (pos, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dw[id * d + j] += grad[pos * d + j];
                        }
                    }
                    self.acc_grad(*weight, &dw);
                }
            }

            Op::Mean { input } => {
                let n = self.nodes[input.0].data.len();
                let g = grad[0] / n as f64;
                self.acc_grad(*input, &vec![g; n]);
            }

            Op::MeanAxis { input, axis } => {
                let shape = self.shape(*input).to_vec();
                let axis_len = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut d = vec![0.0; self.nodes[input.0].data.len()];
                for o in 0..outer {
                    for a in 0..axis_len {
                        for i in 0..inner {
                            d[o * axis_len * inner + a * inner + i] =
                                grad[o * inner + i] / axis_len as f64;
                        }
                    }
                }
                self.acc_grad(*input, &d);
            }

            Op::Sum { input } => {
                let n = self.nodes[input.0].data.len();
                self.acc_grad(*input, &vec![grad[0]; n]);
            }

            Op::Concat { inputs, axis } => {
                let out_shape = self.shape(out).to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let axis_total = out_shape[*axis];
                let mut offset = 0usize;
                for &id in inputs {
                    let s_axis = self.shape(id)[*axis];
                    if self.needs(id) {
                        let mut d = vec![0.0; self.nodes[id.0].data.len()];
                        for o in 0..outer {
                            let src_start = o * axis_total * inner + offset * inner;
                            let dst_start = o * s_axis * inner;
                            let chunk = s_axis * inner;
                            d[dst_start..dst_start + chunk]
                                .copy_from_slice(&grad[src_start..src_start + chunk]);
                        }
                        self.acc_grad(id, &d);
                    }
                    offset += s_axis;
                }
            }

            Op::Reshape { input } => {
                self.acc_grad(*input, grad);
            }

            Op::Permute { input, axes } => {
                // inverse permutation sends the gradient back
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let out_shape = self.shape(out).to_vec();
                let in_shape = self.shape(*input).to_vec();
                let out_strides = crate::tensor::strides(&out_shape);
                let d = permute_data(grad, &in_shape, &inverse, &out_strides);
                self.acc_grad(*input, &d);
            }

            Op::PoolFirst { input } => {
                let shape = self.shape(*input).to_vec();
                let (b, s, d) = (shape[0], shape[1], shape[2]);
                let mut dg = vec![0.0; b * s * d];
                for i in 0..b {
                    dg[i * s * d..i * s * d + d].copy_from_slice(&grad[i * d..(i + 1) * d]);
                }
                self.acc_grad(*input, &dg);
            }

            Op::Dropout { input, mask } => {
                let d: Vec<f64> = grad.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                self.acc_grad(*input, &d);
            }

            Op::BceWithLogits { logits, targets } => {
                let n = targets.len() as f64;
                let d: Vec<f64> = self.nodes[logits.0]
                    .data
                    .iter()
                    .zip(targets.iter())
                    .map(|(&z, &y)| grad[0] * (sigmoid_scalar(z) - y) / n)
                    .collect();
                self.acc_grad(*logits, &d);
            }

            Op::MaskedCrossEntropy { logits, rows, targets } => {
                let v = *self.shape(*logits).last().unwrap();
                let p = rows.len() as f64;
                let mut d = vec![0.0; self.nodes[logits.0].data.len()];
                for (&r, &t) in rows.iter().zip(targets) {
                    let row = &self.nodes[logits.0].data[r * v..(r + 1) * v];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for c in 0..v {
                        let soft = exps[c] / sum;
                        let indicator = if c == t { 1.0 } else { 0.0 };
                        d[r * v + c] += grad[0] * (soft - indicator) / p;
                    }
                }
                self.acc_grad(*logits, &d);
            }
        }
    }
}

fn permute_data(src: &[f64], out_shape: &[usize], axes: &[usize], in_strides: &[usize]) -> Vec<f64> {
    let mut data = vec![0.0; src.len()];
    let ndim = out_shape.len();
    let mut coords = vec![0usize; ndim];
    for (flat, slot) in data.iter_mut().enumerate() {
        let mut remaining = flat;
        for d in (0..ndim).rev() {
            coords[d] = remaining % out_shape[d];
            remaining /= out_shape[d];
        }
        let mut src_idx = 0usize;
        for d in 0..ndim {
            src_idx += coords[d] * in_strides[axes[d]];
        }
        *slot = src[src_idx];
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
        }
    }

    #[test]
    fn softmax_of_equal_inputs_is_uniform() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![3], vec![0.0, 0.0, 0.0], false).unwrap();
        let s = g.softmax(x).unwrap();
        assert_close(g.data(s), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1e-15);
    }

    #[test]
    fn layer_norm_of_constant_vector_is_zero_before_affine() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![4], vec![7.0; 4], false).unwrap();
        let gamma = g.constant(vec![4], vec![1.0; 4]).unwrap();
        let beta = g.constant(vec![4], vec![0.0; 4]).unwrap();
        let y = g.layer_norm(x, gamma, beta).unwrap();
        // zero variance clamped by eps; output exactly zero
        assert_eq!(g.data(y), &[0.0; 4]);
    }

    #[test]
    fn matmul_of_ones_counts_inner_dim() {
        let mut g = Graph::new();
        let a = g.leaf_from(vec![2, 3], vec![1.0; 6], false).unwrap();
        let b = g.leaf_from(vec![3, 2], vec![1.0; 6], false).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 2]);
        assert_eq!(g.data(c), &[3.0; 4]);
    }

    #[test]
    fn matmul_shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.leaf_from(vec![2, 3], vec![1.0; 6], false).unwrap();
        let b = g.leaf_from(vec![2, 2], vec![1.0; 4], false).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut g = Graph::new();
        assert!(matches!(
            g.leaf_from(vec![2], vec![1.0, f64::NAN], false),
            Err(Error::NonFinite { .. })
        ));
        let x = g.leaf_from(vec![1], vec![0.0], false).unwrap();
        let y = g.log(x).unwrap(); // ln(0) = -inf is produced, then caught downstream
        assert!(matches!(g.relu(y), Err(Error::NonFinite { op: "relu" })));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq).unwrap();
        g.backward(loss).unwrap();
        assert_close(g.grad(x).unwrap(), &[2.0, 4.0, 6.0], 1e-12);
        assert_eq!(g.grad(loss).unwrap(), &[1.0]);
    }

    #[test]
    fn tensor_used_twice_accumulates_both_paths() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![2], vec![1.0, 2.0], true).unwrap();
        let a = g.scale(x, 3.0).unwrap();
        let b = g.scale(x, 5.0).unwrap();
        let s = g.add(a, b).unwrap();
        let loss = g.sum_all(s).unwrap();
        g.backward(loss).unwrap();
        assert_close(g.grad(x).unwrap(), &[8.0, 8.0], 1e-12);
    }

    #[test]
    fn gelu_gradient_at_zero_matches_central_difference() {
        // independent finite-difference oracle on the implemented formula
        let h = 1e-6;
        let fd = (gelu_value(h) - gelu_value(-h)) / (2.0 * h);
        assert!((fd - 0.5).abs() < 1e-9, "fd = {fd}");

        let mut g = Graph::new();
        let x = g.leaf_from(vec![1], vec![0.0], true).unwrap();
        let y = g.gelu(x).unwrap();
        let loss = g.sum_all(y).unwrap();
        g.backward(loss).unwrap();
        assert!((g.grad(x).unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![2], vec![1.0, 2.0], true).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn backward_is_idempotent_after_zeroing() {
        let mut g = Graph::new();
        let x = g.leaf_from(vec![3], vec![0.3, -0.7, 1.2], true).unwrap();
        let y = g.gelu(x).unwrap();
        let s = g.softmax(y).unwrap();
        let loss = g.mean_all(s).unwrap();
        g.backward(loss).unwrap();
        let first = g.grad(x).unwrap().to_vec();
        g.zero_grads();
        g.backward(loss).unwrap();
        let second = g.grad(x).unwrap().to_vec();
        assert!(first
            .iter()
            .zip(second.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn embedding_lookup_and_scatter_gradient() {
        let mut g = Graph::new();
        let w = g
            .leaf_from(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true)
            .unwrap();
        let e = g.embedding(w, &[2, 0, 2], &[3]).unwrap();
        assert_eq!(g.shape(e), &[3, 2]);
        assert_eq!(g.data(e), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum_all(e).unwrap();
        g.backward(loss).unwrap();
        // row 2 used twice, row 0 once, row 1 never
        assert_close(g.grad(w).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0], 1e-12);

        assert!(g.embedding(w, &[3], &[1]).is_err());
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::new();
        let a = g.leaf_from(vec![2, 1], vec![1.0, 2.0], true).unwrap();
        let b = g.leaf_from(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0], true).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3]);
        assert_eq!(g.data(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = g
            .constant(vec![2, 3], vec![1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0])
            .unwrap();
        let p = g.mul(c, w).unwrap();
        let loss = g.sum_all(p).unwrap();
        g.backward(loss).unwrap();
        assert_close(g.grad(a).unwrap(), &[1.0, 1000.0], 1e-12);
        assert_close(g.grad(b).unwrap(), &[10.0, 100.0, 10000.0, 100000.0], 1e-12);
    }

    #[test]
    fn permute_roundtrip_gradient() {
        let mut g = Graph::new();
        let x = g
            .leaf_from(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true)
            .unwrap();
        let t = g.transpose(x).unwrap();
        assert_eq!(g.shape(t), &[3, 2]);
        assert_eq!(g.data(t), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let w = g
            .constant(vec![3, 2], (1..=6).map(|v| v as f64).collect())
            .unwrap();
        let p = g.mul(t, w).unwrap();
        let loss = g.sum_all(p).unwrap();
        g.backward(loss).unwrap();
        // grad of x[i][j] is w[j][i]
        assert_close(g.grad(x).unwrap(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0], 1e-12);
    }

    #[test]
    fn bce_of_zero_logits_is_ln2() {
        let mut g = Graph::new();
        let z = g.leaf_from(vec![2, 3], vec![0.0; 6], true).unwrap();
        let loss = g.bce_with_logits(z, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((g.value(loss) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_saturates_to_zero_on_confident_correct_logits() {
        let mut g = Graph::new();
        let z = g.leaf_from(vec![2], vec![40.0, 40.0], false).unwrap();
        let loss = g.bce_with_logits(z, &[1.0, 1.0]).unwrap();
        assert!(g.value(loss) < 1e-10);
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let mut g = Graph::new();
        let z = g.leaf_from(vec![2], vec![0.0, 0.0], false).unwrap();
        assert!(g.bce_with_logits(z, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn pool_first_selects_position_zero() {
        let mut g = Graph::new();
        let x = g
            .leaf_from(vec![2, 2, 2], (1..=8).map(|v| v as f64).collect(), true)
            .unwrap();
        let p = g.pool_first(x).unwrap();
        assert_eq!(g.data(p), &[1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum_all(p).unwrap();
        g.backward(loss).unwrap();
        assert_close(
            g.grad(x).unwrap(),
            &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            1e-12,
        );
    }

    #[test]
    fn frozen_leaves_get_no_grad_buffers() {
        let mut g = Graph::new();
        let frozen = g.leaf_from(vec![2], vec![1.0, 2.0], false).unwrap();
        let live = g.leaf_from(vec![2], vec![3.0, 4.0], true).unwrap();
        let p = g.mul(frozen, live).unwrap();
        let loss = g.sum_all(p).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(frozen).is_none());
        assert_close(g.grad(live).unwrap(), &[1.0, 2.0], 1e-12);
    }
}
