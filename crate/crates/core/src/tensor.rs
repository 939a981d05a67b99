//! Dense f64 tensor value type plus the shape/broadcast helpers the graph ops share.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Dense n-dimensional array of 64-bit floats, row-major.
///
/// This is the storage type for model parameters and checkpoints. During a
/// forward/backward pass the data is copied into a [`crate::graph::Graph`]
/// leaf; gradients collected from the graph land back in `grad`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero dimension in shape {:?}", shape)));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![value; numel], requires_grad: false, grad: None }
    }

    /// Seeded normal init, the default for projection weights.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let numel: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid normal");
        let data = (0..numel).map(|_| dist.sample(rng)).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Add `src` into the grad buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.data.len() {
            return Err(Error::invalid(format!(
                "gradient length {} does not match tensor of {} elements",
                src.len(),
                self.data.len()
            )));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, s) in grad.iter_mut().zip(src) {
            *g += s;
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Compute the numpy-style broadcast shape of two operand shapes, or report
/// which op failed.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let pa = pad_shape(a, ndim);
    let pb = pad_shape(b, ndim);
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        if pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1 {
            out[i] = pa[i].max(pb[i]);
        } else {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        }
    }
    Ok(out)
}

/// Pad a shape with leading ones to `ndim` dimensions.
pub fn pad_shape(shape: &[usize], ndim: usize) -> Vec<usize> {
    let mut padded = vec![1usize; ndim];
    let offset = ndim - shape.len();
    padded[offset..].copy_from_slice(shape);
    padded
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Map a flat index in `out_shape` to the flat index of a broadcast operand
/// with padded shape `op_shape` (same ndim, dims equal or 1).
pub fn broadcast_index(flat: usize, out_shape: &[usize], op_shape: &[usize]) -> usize {
    let mut remaining = flat;
    let mut idx = 0usize;
    let mut stride = 1usize;
    // walk dimensions right to left
    for d in (0..out_shape.len()).rev() {
        let coord = remaining % out_shape[d];
        remaining /= out_shape[d];
        let c = if op_shape[d] == 1 { 0 } else { coord };
        idx += c * stride;
        stride *= op_shape[d];
    }
    idx
}

/// Sum a gradient of `grad_shape` down to `target_shape` (the reverse of a
/// broadcast), both given unpadded.
pub fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let padded_target = pad_shape(target_shape, grad_shape.len());
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    for (flat, &g) in grad.iter().enumerate() {
        let t = broadcast_index(flat, grad_shape, &padded_target);
        out[t] += g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shape_leading_and_interior() {
        assert_eq!(broadcast_shape("add", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(
            broadcast_shape("add", &[4, 1, 1, 5], &[4, 2, 5, 5]).unwrap(),
            vec![4, 2, 5, 5]
        );
        assert!(broadcast_shape("add", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn broadcast_error_names_op_and_shapes() {
        let err = broadcast_shape("mul", &[2, 3], &[2, 4]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mul"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 4]"), "{msg}");
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        // grad over [2,3] reduced to [3] sums the rows
        let grad = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(reduce_to_shape(&grad, &[2, 3], &[3]), vec![11.0, 22.0, 33.0]);
        // reduced to [2,1] sums the columns
        assert_eq!(reduce_to_shape(&grad, &[2, 3], &[2, 1]), vec![6.0, 60.0]);
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn grad_accumulation_is_additive() {
        let mut t = Tensor::zeros(vec![3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad.as_deref().unwrap(), &[2.0, 3.0, 4.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
