//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its value; [`Graph::backward`] replays the tape in reverse and returns the
//! adjoint of every node that depends on a gradient-tracking leaf. Graphs are
//! cheap and meant to be built per sample; trainable state lives outside the
//! graph in [`Parameter`]s.

mod gemm;
mod graph;
pub mod init;
pub mod optim;

pub use gemm::gemm;
pub use graph::{ConvSpec, CustomOp, Gradients, Graph, Var, ACOS_CLAMP};
pub use optim::{Adam, AdamState, Parameter};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Euclidean norm of all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Inverse of a row-major 3×3 matrix via the adjugate, with its determinant.
/// Returns `None` when the determinant is zero or not finite.
pub fn invert3(a: &[f64]) -> Option<([f64; 9], f64)> {
    let det = det3(a);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    let cof = |r0: usize, c0: usize, r1: usize, c1: usize| {
        a[r0 * 3 + c0] * a[r1 * 3 + c1] - a[r0 * 3 + c1] * a[r1 * 3 + c0]
    };
    let inv = [
        cof(1, 1, 2, 2) * inv_det,
        -cof(0, 1, 2, 2) * inv_det,
        cof(0, 1, 1, 2) * inv_det,
        -cof(1, 0, 2, 2) * inv_det,
        cof(0, 0, 2, 2) * inv_det,
        -cof(0, 0, 1, 2) * inv_det,
        cof(1, 0, 2, 1) * inv_det,
        -cof(0, 0, 2, 1) * inv_det,
        cof(0, 0, 1, 1) * inv_det,
    ];
    Some((inv, det))
}

pub fn det3(a: &[f64]) -> f64 {
    a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
        + a[2] * (a[3] * a[7] - a[4] * a[6])
}

/// Row-major 3×3 product.
pub fn matmul3(a: &[f64], b: &[f64]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn invert3_identity_and_diagonal() {
        let (inv, det) = invert3(&Tensor::identity(3).data).unwrap();
        assert_eq!(det, 1.0);
        assert_eq!(inv.to_vec(), Tensor::identity(3).data);

        let (inv, _) = invert3(&[0.5, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.2]).unwrap();
        let expect = [2.0, 0.0, 0.0, 0.0, 10.0 / 3.0, 0.0, 0.0, 0.0, 5.0];
        for (a, b) in inv.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invert3_rejects_singular() {
        assert!(invert3(&[1.0; 9]).is_none());
    }
}
