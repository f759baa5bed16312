use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// First/second moment buffers and step counter of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub(crate) fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// A named trainable tensor with its pending gradient and optimizer state.
///
/// Values and moment buffers are kept exactly representable in single
/// precision; all arithmetic runs in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Option<Vec<f64>>,
    pub adam: AdamState,
}

impl Parameter {
    pub fn new(name: impl Into<String>, mut tensor: Tensor) -> Self {
        round_f32(tensor.data_mut());
        let n = tensor.len();
        Parameter {
            name: name.into(),
            tensor,
            grad: None,
            adam: AdamState::new(n),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    /// Add `g` into the pending gradient.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, x)| *a += x),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

pub(crate) fn round_f32(xs: &mut [f64]) {
    xs.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-5,
            beta1: 0.85,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected Adam update of every parameter, then clears gradients.
    ///
    /// Fails without touching anything if any parameter lacks a gradient.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::InvalidState(format!(
                "parameter `{}` has no gradient; run backward first",
                p.name
            )));
        }
        for p in params {
            let grad = p.grad.take().expect("checked above");
            let st = &mut p.adam;
            st.step += 1;
            let t = st.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            for (((w, m), v), g) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
                .zip(&grad)
            {
                *m = (self.beta1 * *m + (1.0 - self.beta1) * g) as f32 as f64;
                *v = (self.beta2 * *v + (1.0 - self.beta2) * g * g) as f32 as f64;
                let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = (*w - update) as f32 as f64;
            }
        }
        Ok(())
    }
}
