use serde::{Deserialize, Serialize};

use super::{gemm, invert3, Tensor};
use crate::error::{Error, Result};

/// Inputs to arccosine are clamped to `[-1 + ACOS_CLAMP, 1 - ACOS_CLAMP]`.
pub const ACOS_CLAMP: f64 = 1e-7;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 2-D convolution layer. Zero padding, no dilation, no groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || ph < self.kernel_h || pw < self.kernel_w {
            return None;
        }
        Some((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }
}

/// An operation whose forward pass is computed outside the graph and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Adjoint of each input given the adjoint of the output. `None` means
    /// "no contribution" for that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    PowScalar(Var, f64),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Relu(Var),
    Acos { input: Var, clamped: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Inverse3(Var),
    Dot(Var, Var),
    Norm(Var),
    Conv2d { input: Var, weight: Var, bias: Var, spec: ConvSpec, cols: Vec<f64>, in_hw: (usize, usize) },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Gradient-tracking leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.len() == 1 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{op}: incompatible shapes {:?} and {:?}",
                sa.shape(),
                sb.shape()
            )))
        }
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = if tb.len() == 1 && ta.len() != 1 {
            let s = tb.data()[0];
            ta.data().iter().map(|&x| f(x, s)).collect()
        } else {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        Tensor {
            shape: ta.shape().to_vec(),
            data,
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise sum. `b` may also be a single-element tensor, broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("div", a, b)?;
        if self.value(b).data().iter().any(|&y| y == 0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        let out = self.zip_map(a, b, |x, y| x / y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::MulScalar(a, s), rg)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if p.fract() != 0.0 && self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::domain("powf", "negative base with fractional exponent"));
        }
        let out = self.map(a, |x| x.powf(p));
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::PowScalar(a, p), rg))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0 || x.is_nan()) {
            return Err(Error::domain("sqrt", "negative or NaN input"));
        }
        let out = self.map(a, f64::sqrt);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Sqrt(a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::domain("log", "non-positive input"));
        }
        let out = self.map(a, f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::abs);
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// Arccosine in radians. Inputs are clamped to `[-1+ACOS_CLAMP, 1-ACOS_CLAMP]`
    /// and the derivative is evaluated at the clamped point.
    pub fn acos(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().iter().any(|x| x.is_nan()) {
            return Err(Error::domain("acos", "NaN input"));
        }
        let lim = 1.0 - ACOS_CLAMP;
        let clamped: Vec<f64> = t.data().iter().map(|&x| x.clamp(-lim, lim)).collect();
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: clamped.iter().map(|x| x.acos()).collect(),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Acos { input: a, clamped }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Matrix product of a `m×k` and a `k×n` tensor.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::InvalidArgument(format!(
                "matmul: incompatible shapes {sa:?} and {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::MatMul { a, b, m, k, n },
            rg,
        ))
    }

    /// Inverse of a 3×3 matrix.
    pub fn inverse3(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape() != [3, 3] {
            return Err(Error::InvalidArgument(format!(
                "inverse3: expected 3×3, got {:?}",
                t.shape()
            )));
        }
        let (inv, _) =
            invert3(t.data()).ok_or_else(|| Error::domain("inverse3", "singular matrix"))?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor {
                shape: vec![3, 3],
                data: inv.to_vec(),
            },
            Op::Inverse3(a),
            rg,
        ))
    }

    /// Sum of elementwise products of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::InvalidArgument(format!(
                "dot: length mismatch {} vs {}",
                ta.len(),
                tb.len()
            )));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// Euclidean norm over all entries.
    pub fn norm(&mut self, a: Var) -> Var {
        let n = self.value(a).norm();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(n), Op::Norm(a), rg)
    }

    /// 2-D convolution of a `C×H×W` input with `O×C×kh×kw` weights and `O` biases.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let ti = self.value(input);
        let s = ti.shape();
        if s.len() != 3 || s[0] != spec.in_channels {
            return Err(Error::InvalidArgument(format!(
                "conv2d: input {s:?} does not match {} input channels",
                spec.in_channels
            )));
        }
        if self.value(weight).shape() != spec.weight_shape() {
            return Err(Error::InvalidArgument(format!(
                "conv2d: weight shape {:?}, expected {:?}",
                self.value(weight).shape(),
                spec.weight_shape()
            )));
        }
        if self.value(bias).len() != spec.out_channels {
            return Err(Error::InvalidArgument("conv2d: bias length".into()));
        }
        let (h, w) = (s[1], s[2]);
        let (oh, ow) = spec.output_size(h, w).ok_or_else(|| {
            Error::InvalidArgument(format!("conv2d: {h}×{w} input too small for {spec:?}"))
        })?;
        let cols = im2col(ti.data(), h, w, &spec, oh, ow);
        let ckk = spec.in_channels * spec.kernel_h * spec.kernel_w;
        let mut out = vec![0.0; spec.out_channels * oh * ow];
        for (o, &b) in self.value(bias).data().iter().enumerate() {
            out[o * oh * ow..(o + 1) * oh * ow].fill(b);
        }
        gemm(
            spec.out_channels,
            ckk,
            oh * ow,
            self.value(weight).data(),
            false,
            &cols,
            false,
            1.0,
            &mut out,
        );
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            Tensor {
                shape: vec![spec.out_channels, oh, ow],
                data: out,
            },
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                cols,
                in_hw: (h, w),
            },
            rg,
        ))
    }

    /// Affine layer `weight · flatten(x) + bias` with `weight` of shape `out×in`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).len();
        let out = self.value(weight).shape()[0];
        let col = self.reshape(x, &[n, 1])?;
        let y = self.matmul(weight, col)?;
        let y = self.reshape(y, &[out])?;
        self.add(y, bias)
    }

    /// Register the result of a hand-written operation.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_deref() else {
                continue;
            };
            self.propagate(node, g, before);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc_broadcast(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc_broadcast(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let bcast = vb.len() == 1 && va.len() != 1;
                if self.wants(*a) {
                    let ga = if bcast {
                        g.iter().map(|x| x * vb[0]).collect()
                    } else {
                        g.iter().zip(vb).map(|(x, y)| x * y).collect()
                    };
                    self.acc(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    self.acc_broadcast(grads, *b, gb);
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let bcast = vb.len() == 1 && va.len() != 1;
                let bv = |i: usize| if bcast { vb[0] } else { vb[i] };
                if self.wants(*a) {
                    let ga = g.iter().enumerate().map(|(i, x)| x / bv(i)).collect();
                    self.acc(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g
                        .iter()
                        .enumerate()
                        .map(|(i, x)| -x * va[i] / (bv(i) * bv(i)))
                        .collect();
                    self.acc_broadcast(grads, *b, gb);
                }
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.to_vec()),
            Op::MulScalar(a, s) => self.acc(grads, *a, g.iter().map(|x| x * s).collect()),
            Op::PowScalar(a, p) => {
                let ga = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, &v)| x * p * v.powf(p - 1.0))
                    .collect();
                self.acc(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                // zero subgradient at the origin
                let ga = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(x, &s)| if s > 0.0 { x / (2.0 * s) } else { 0.0 })
                    .collect();
                self.acc(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.iter().zip(node.value.data()).map(|(x, y)| x * y).collect();
                self.acc(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.iter().zip(val(*a)).map(|(x, y)| x / y).collect();
                self.acc(grads, *a, ga);
            }
            Op::Abs(a) => {
                let ga = g.iter().zip(val(*a)).map(|(x, &y)| x * sign(y)).collect();
                self.acc(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(val(*a))
                    .map(|(x, &y)| if y > 0.0 { *x } else { 0.0 })
                    .collect();
                self.acc(grads, *a, ga);
            }
            Op::Acos { input, clamped } => {
                let ga = g
                    .iter()
                    .zip(clamped)
                    .map(|(x, c)| -x / (1.0 - c * c).sqrt())
                    .collect();
                self.acc(grads, *input, ga);
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                self.acc(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                self.acc(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::Reshape(a) => self.acc(grads, *a, g.to_vec()),
            Op::MatMul { a, b, m, k, n } => {
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(*m, *n, *k, g, false, val(*b), true, 0.0, &mut ga);
                    self.acc(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(*k, *m, *n, val(*a), true, g, false, 0.0, &mut gb);
                    self.acc(grads, *b, gb);
                }
            }
            Op::Inverse3(a) => {
                // dA = -A^{-T} G A^{-T}
                let inv = node.value.data();
                let mut tmp = vec![0.0; 9];
                gemm(3, 3, 3, inv, true, g, false, 0.0, &mut tmp);
                let mut ga = vec![0.0; 9];
                gemm(3, 3, 3, &tmp, false, inv, true, 0.0, &mut ga);
                ga.iter_mut().for_each(|x| *x = -*x);
                self.acc(grads, *a, ga);
            }
            Op::Dot(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.wants(*a) {
                    self.acc(grads, *a, vb.iter().map(|y| g[0] * y).collect());
                }
                if self.wants(*b) {
                    self.acc(grads, *b, va.iter().map(|x| g[0] * x).collect());
                }
            }
            Op::Norm(a) => {
                let n = node.value.item();
                let ga = if n > 0.0 {
                    val(*a).iter().map(|x| g[0] * x / n).collect()
                } else {
                    vec![0.0; val(*a).len()]
                };
                self.acc(grads, *a, ga);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                cols,
                in_hw,
            } => {
                let (oh, ow) = (node.value.shape()[1], node.value.shape()[2]);
                let hw = oh * ow;
                let ckk = spec.in_channels * spec.kernel_h * spec.kernel_w;
                if self.wants(*bias) {
                    let gb = g.chunks(hw).map(|row| row.iter().sum()).collect();
                    self.acc(grads, *bias, gb);
                }
                if self.wants(*weight) {
                    let mut gw = vec![0.0; spec.out_channels * ckk];
                    gemm(spec.out_channels, hw, ckk, g, false, cols, true, 0.0, &mut gw);
                    self.acc(grads, *weight, gw);
                }
                if self.wants(*input) {
                    let mut gcols = vec![0.0; ckk * hw];
                    gemm(ckk, spec.out_channels, hw, val(*weight), true, g, false, 0.0, &mut gcols);
                    let gi = col2im(&gcols, in_hw.0, in_hw.1, spec, oh, ow);
                    self.acc(grads, *input, gi);
                }
            }
            Op::Custom { inputs, op } => {
                let tensors: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let gs = op.backward(&tensors, &node.value, g);
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        self.acc(grads, *v, gi);
                    }
                }
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.wants(v) {
            return;
        }
        debug_assert_eq!(g.len(), self.nodes[v.0].value.len());
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
            slot => *slot = Some(g),
        }
    }

    /// Accumulate into `v`, summing first if `v` was broadcast as a scalar.
    fn acc_broadcast(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if self.nodes[v.0].value.len() == 1 && g.len() != 1 {
            let s = g.iter().sum();
            self.acc(grads, v, vec![s]);
        } else {
            self.acc(grads, v, g);
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn im2col(input: &[f64], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize) -> Vec<f64> {
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let hw = oh * ow;
    let mut cols = vec![0.0; spec.in_channels * kh * kw * hw];
    for c in 0..spec.in_channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * hw;
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize) -> Vec<f64> {
    let (kh, kw, s, p) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let hw = oh * ow;
    let mut out = vec![0.0; spec.in_channels * h * w];
    for c in 0..spec.in_channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * hw;
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-4;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-5 || (a - b).abs() <= 1e-3 * a.abs().max(b.abs())
    }

    /// Compare autograd against central differences for every input entry.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let eval = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let vs: Vec<Var> = ts.iter().map(|t| g.variable(t.clone())).collect();
            let out = f(&mut g, &vs);
            let y = g.value(out).item();
            (g, vs, out, y)
        };
        let (g, vs, out, _) = eval(&inputs);
        let grads = g.backward(out).unwrap();
        for (k, v) in vs.iter().enumerate() {
            let analytic = grads.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
            for i in 0..inputs[k].len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += H;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= H;
                let fd = (eval(&plus).3 - eval(&minus).3) / (2.0 * H);
                assert!(
                    close(analytic[i], fd),
                    "input {k}[{i}]: autograd {} vs fd {fd}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn relu_negative_is_zero_with_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(-2.0));
        let y = g.relu(x);
        assert_eq!(g.value(y).item(), 0.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0]);
    }

    #[test]
    fn root_gradient_is_one() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.sum(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(y).unwrap(), &[1.0]);
    }

    #[test]
    fn sqrt_derivative_at_four() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(4.0));
        let y = g.sqrt(x).unwrap();
        let grads = g.backward(y).unwrap();
        let analytic = grads.get(x).unwrap()[0];
        let fd = ((4.0f64 + H).sqrt() - (4.0f64 - H).sqrt()) / (2.0 * H);
        assert!((analytic - 0.25).abs() < 1e-15);
        assert!((analytic - fd).abs() / fd < 1e-6);
    }

    #[test]
    fn inverse_of_identity() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::identity(3));
        let inv = g.inverse3(a).unwrap();
        assert_eq!(g.value(inv), &Tensor::identity(3));
    }

    #[test]
    fn domain_errors_name_the_op() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(-1.0));
        match g.log(x) {
            Err(Error::NumericDomain { op, .. }) => assert_eq!(op, "log"),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
        assert!(g.sqrt(x).is_err());
        let nan = g.variable(Tensor::scalar(f64::NAN));
        assert!(matches!(g.acos(nan), Err(Error::NumericDomain { op: "acos", .. })));
        let sing = g.variable(Tensor::new(vec![3, 3], vec![1.0; 9]).unwrap());
        assert!(matches!(g.inverse3(sing), Err(Error::NumericDomain { op: "inverse3", .. })));
    }

    #[test]
    fn acos_clamps_outside_unit_interval() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_vec(vec![1.0 + 1e-9, -1.0 - 1e-9]));
        let y = g.acos(x).unwrap();
        let v = g.value(y).data();
        assert!(v[0] > 0.0 && v[0].is_finite());
        assert!(v[1] < std::f64::consts::PI && v[1].is_finite());
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|d| d.is_finite()));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[2, 3], 0.5, 2.0);
        let b = rand_tensor(&mut rng, &[2, 3], 0.5, 2.0);
        check(vec![a.clone(), b.clone()], |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let d = g.sub(s, v[1]).unwrap();
            let m = g.mul(d, v[1]).unwrap();
            let q = g.div(m, v[0]).unwrap();
            let p = g.powf(q, 1.7).unwrap();
            let r = g.sqrt(p).unwrap();
            let e = g.exp(r);
            let l = g.log(e).unwrap();
            let sc = g.mul_scalar(l, -0.3);
            let ab = g.abs(sc);
            let sh = g.add_scalar(ab, 0.1);
            g.mean(sh)
        });
    }

    #[test]
    fn scalar_broadcast_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        let s = rand_tensor(&mut rng, &[1], 0.5, 1.5);
        check(vec![a, s], |g, v| {
            let d = g.div(v[0], v[1]).unwrap();
            let m = g.mul(d, v[1]).unwrap();
            let m = g.mul(m, v[1]).unwrap();
            let x = g.sub(m, v[1]).unwrap();
            let x = g.add(x, v[1]).unwrap();
            let sq = g.mul(x, x).unwrap();
            g.sum(sq)
        });
    }

    #[test]
    fn linear_algebra_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = rand_tensor(&mut rng, &[3, 3], -0.5, 0.5);
        for i in 0..3 {
            a.data_mut()[i * 4] += 2.0;
        }
        let b = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
        let c = rand_tensor(&mut rng, &[5, 1], -1.0, 1.0);
        let l = rand_tensor(&mut rng, &[3], 0.2, 1.0);
        check(vec![a, b, c, l], |g, v| {
            let inv = g.inverse3(v[0]).unwrap();
            let ab = g.matmul(inv, v[1]).unwrap();
            let est = g.matmul(ab, v[2]).unwrap();
            let n1 = g.norm(est);
            let n2 = g.norm(v[3]);
            let d = g.dot(est, v[3]).unwrap();
            let nn = g.mul(n1, n2).unwrap();
            let c = g.div(d, nn).unwrap();
            let c = g.mul_scalar(c, 0.9);
            g.acos(c).unwrap()
        });
    }

    #[test]
    fn conv_relu_linear_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 3,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        };
        let x = rand_tensor(&mut rng, &[2, 5, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &spec.weight_shape(), -0.5, 0.5);
        let b = rand_tensor(&mut rng, &[3], -0.1, 0.1);
        let fw = rand_tensor(&mut rng, &[2, 27], -0.3, 0.3);
        let fb = rand_tensor(&mut rng, &[2], -0.1, 0.1);
        check(vec![x, w, b, fw, fb], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], spec).unwrap();
            assert_eq!(g.value(y).shape(), &[3, 3, 3]);
            let y = g.relu(y);
            let z = g.linear(y, v[3], v[4]).unwrap();
            let z = g.mul(z, z).unwrap();
            g.sum(z)
        });
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 2,
            kernel_h: 3,
            kernel_w: 2,
            stride: 1,
            padding: 1,
        };
        let x = rand_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &spec.weight_shape(), -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2], -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, spec).unwrap();
        let (oh, ow) = spec.output_size(4, 4).unwrap();
        assert_eq!((oh, ow), (4, 5));
        for o in 0..2 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..2 {
                                let iy = oy as isize + ki as isize - 1;
                                let ix = ox as isize + kj as isize - 1;
                                if (0..4).contains(&iy) && (0..4).contains(&ix) {
                                    acc += w.data()[((o * 2 + c) * 3 + ki) * 2 + kj]
                                        * x.data()[(c * 4 + iy as usize) * 4 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = g.value(y).data()[(o * oh + oy) * ow + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fan_out_accumulates_both_paths() {
        // y = x*x + exp(x): x feeds three consumers
        let x0 = 0.7;
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(x0));
        let sq = g.mul(x, x).unwrap();
        let e = g.exp(x);
        let y = g.add(sq, e).unwrap();
        let grads = g.backward(y).unwrap();
        let path_sq = ((x0 + H) * (x0 + H) - (x0 - H) * (x0 - H)) / (2.0 * H);
        let path_exp = ((x0 + H).exp() - (x0 - H).exp()) / (2.0 * H);
        assert!((grads.get(x).unwrap()[0] - (path_sq + path_exp)).abs() < 1e-7);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(3.0));
        let x = g.variable(Tensor::scalar(2.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &[3.0]);
    }
}
