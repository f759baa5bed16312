//! Sensor-mapping and illuminant-estimation networks and the full
//! image → illuminant pipeline.
//!
//! ```text
//! H(I) ─ mapping net ─ v ─ M = |V| / (Σ|V| + ε)
//!                           │
//! I_m = M·I ─ H(I_m) ─ estimation net ─ ℓ̂_m ─ ℓ = normalize(M⁻¹ ℓ̂_m)
//! ```

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{PixelSet, RawImage};
use crate::error::{Error, Result};
use crate::histogram::{histogram_node, HistogramConfig, HistogramParams};
use crate::tensor::init::{derive_seed, xavier_init};
use crate::tensor::optim::AdamState;
use crate::tensor::{det3, invert3, ConvSpec, Graph, Parameter, Tensor, Var};

/// One convolution layer; input channels follow from the previous layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn square(kernel: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        ConvLayer {
            kernel_h: kernel,
            kernel_w: kernel,
            out_channels,
            stride,
            padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Exactly three layers, each followed by ReLU. Shared by both networks.
    pub conv: Vec<ConvLayer>,
    /// Expected side length of input images.
    pub image_size: usize,
    /// ε in the normalization of the mapping matrix.
    pub matrix_eps: f64,
    /// Matrices with `|det| <` this are jittered before inversion.
    pub det_floor: f64,
    pub jitter_scale: f64,
    pub jitter_retries: u32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::with_channels([64, 128, 256])
    }
}

impl NetworkConfig {
    /// The default stack (5×5/2, 3×3/2, 3×3/2) with the given widths.
    pub fn with_channels(ch: [usize; 3]) -> Self {
        NetworkConfig {
            conv: vec![
                ConvLayer::square(5, ch[0], 2, 2),
                ConvLayer::square(3, ch[1], 2, 1),
                ConvLayer::square(3, ch[2], 2, 1),
            ],
            image_size: crate::dataio::THUMBNAIL_SIZE,
            matrix_eps: 1e-6,
            det_floor: 1e-9,
            jitter_scale: 1e-4,
            jitter_retries: 5,
        }
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut c_in = 3;
        self.conv
            .iter()
            .map(|l| {
                let spec = ConvSpec {
                    in_channels: c_in,
                    out_channels: l.out_channels,
                    kernel_h: l.kernel_h,
                    kernel_w: l.kernel_w,
                    stride: l.stride,
                    padding: l.padding,
                };
                c_in = l.out_channels;
                spec
            })
            .collect()
    }

    /// Length of the flattened conv output for an `bins×bins` input, or an
    /// error if the stack is malformed.
    pub fn flat_size(&self, bins: usize) -> Result<usize> {
        if self.conv.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "network needs exactly 3 conv layers, got {}",
                self.conv.len()
            )));
        }
        let (mut h, mut w) = (bins, bins);
        let specs = self.conv_specs();
        for (i, s) in specs.iter().enumerate() {
            if s.out_channels == 0 || s.kernel_h == 0 || s.kernel_w == 0 {
                return Err(Error::InvalidArgument(format!("conv layer {} has a zero dimension", i + 1)));
            }
            (h, w) = s.output_size(h, w).ok_or_else(|| {
                Error::InvalidArgument(format!("conv layer {} leaves no spatial extent", i + 1))
            })?;
        }
        Ok(specs[2].out_channels * h * w)
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        self.flat_size(bins)?;
        if self.image_size == 0 {
            return Err(Error::InvalidArgument("image_size must be positive".into()));
        }
        if !(self.matrix_eps >= 0.0 && self.det_floor > 0.0 && self.jitter_scale > 0.0) {
            return Err(Error::InvalidArgument("matrix_eps, det_floor and jitter_scale out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub network: NetworkConfig,
    pub histogram: HistogramConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.histogram.validate()?;
        self.network.validate(self.histogram.bins)
    }
}

/// `M = |V| / (Σ|V| + ε)` with `V` the row-major reshape of `v`.
pub fn build_mapping_matrix(v: &[f64; 9], eps: f64) -> [f64; 9] {
    let total: f64 = v.iter().map(|x| x.abs()).sum::<f64>() + eps;
    if total == 0.0 {
        return [0.0; 9];
    }
    v.map(|x| x.abs() / total)
}

fn mapping_node(g: &mut Graph, v: Var, eps: f64) -> Result<Var> {
    let vm = g.reshape(v, &[3, 3])?;
    let a = g.abs(vm);
    let s = g.sum(a);
    let s = g.add_scalar(s, eps);
    g.div(a, s)
}

/// Result of [`invert_with_jitter`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    /// Offset added before inversion, if the input was singular.
    pub offset: Option<[f64; 9]>,
    /// The matrix that was inverted.
    pub matrix: [f64; 9],
    pub inverse: [f64; 9],
    /// Jitter draws used (0 when no jitter was needed).
    pub attempts: u32,
}

impl Inversion {
    pub fn jittered(&self) -> bool {
        self.offset.is_some()
    }
}

/// Invert `m`, or if `|det m| < det_floor` invert `m + E` with fresh
/// `E ~ N(0,1)·jitter_scale` drawn up to `jitter_retries` times.
pub fn invert_with_jitter(
    m: &[f64; 9],
    cfg: &NetworkConfig,
    rng: &mut impl Rng,
    image: &str,
) -> Result<Inversion> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("invert_with_jitter", format!("non-finite matrix for {image}")));
    }
    let usable = |a: &[f64; 9]| {
        if det3(a).abs() < cfg.det_floor {
            return None;
        }
        invert3(a).map(|(inv, _)| inv)
    };
    if let Some(inverse) = usable(m) {
        return Ok(Inversion {
            offset: None,
            matrix: *m,
            inverse,
            attempts: 0,
        });
    }
    for attempt in 1..=cfg.jitter_retries {
        let e: [f64; 9] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * cfg.jitter_scale);
        let jittered: [f64; 9] = std::array::from_fn(|i| m[i] + e[i]);
        if let Some(inverse) = usable(&jittered) {
            log::debug!("{image}: singular mapping matrix, jitter accepted on attempt {attempt}");
            return Ok(Inversion {
                offset: Some(e),
                matrix: jittered,
                inverse,
                attempts: attempt,
            });
        }
    }
    Err(Error::SingularMatrix {
        image: image.to_owned(),
        attempts: cfg.jitter_retries as usize,
    })
}

/// Seed for the jitter draws of a given matrix, so that forward passes stay
/// a pure function of image and parameters.
fn jitter_seed(m: &[f64; 9]) -> u64 {
    m.iter().fold(0xcbf2_9ce4_8422_2325, |h, v| {
        v.to_bits().to_le_bytes().iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
    })
}

/// A histogram block followed by conv/ReLU ×3 and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub histogram: HistogramParams,
    /// (weight, bias) per conv layer.
    pub conv: Vec<(Parameter, Parameter)>,
    pub fc: (Parameter, Parameter),
    specs: Vec<ConvSpec>,
}

/// Parameters per branch: 2 histogram + 2 per conv layer + 2 fc.
const BRANCH_PARAMS: usize = 10;

impl Branch {
    fn new(prefix: &str, cfg: &ModelConfig, outputs: usize, seed: u64) -> Result<Self> {
        let specs = cfg.network.conv_specs();
        let flat = cfg.network.flat_size(cfg.histogram.bins)?;
        let mut conv = Vec::new();
        for (i, s) in specs.iter().enumerate() {
            let w = xavier_init(&s.weight_shape(), derive_seed(seed, i as u64))?;
            conv.push((
                Parameter::new(format!("{prefix}.conv{}.weight", i + 1), w),
                Parameter::new(format!("{prefix}.conv{}.bias", i + 1), Tensor::zeros(&[s.out_channels])),
            ));
        }
        let fc_w = xavier_init(&[outputs, flat], derive_seed(seed, 3))?;
        Ok(Branch {
            histogram: HistogramParams::new(cfg.histogram.clone(), &format!("{prefix}.hist"))?,
            conv,
            fc: (
                Parameter::new(format!("{prefix}.fc.weight"), fc_w),
                Parameter::new(format!("{prefix}.fc.bias"), Tensor::zeros(&[outputs])),
            ),
            specs,
        })
    }

    fn params(&self) -> impl Iterator<Item = &Parameter> {
        [&self.histogram.log_scale, &self.histogram.log_falloff]
            .into_iter()
            .chain(self.conv.iter().flat_map(|(w, b)| [w, b]))
            .chain([&self.fc.0, &self.fc.1])
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        [&mut self.histogram.log_scale, &mut self.histogram.log_falloff]
            .into_iter()
            .chain(self.conv.iter_mut().flat_map(|(w, b)| [w, b]))
            .chain([&mut self.fc.0, &mut self.fc.1])
    }

    /// `vars` are this branch's bound parameters in [`Branch::params`] order.
    fn trace(&self, g: &mut Graph, pixels: Var, weights: Arc<[f64]>, vars: &[Var]) -> Result<Var> {
        let mut x = histogram_node(g, pixels, weights, vars[0], vars[1], &self.histogram.config)?;
        for (i, spec) in self.specs.iter().enumerate() {
            x = g.conv2d(x, vars[2 + 2 * i], vars[3 + 2 * i], *spec)?;
            x = g.relu(x);
        }
        g.linear(x, vars[8], vars[9])
    }
}

/// Mapping matrix for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingMatrix {
    /// Raw mapping-network output, row-major `V`.
    pub v: [f64; 9],
    pub m: [f64; 9],
    /// Inverse of `m`, or of its jittered version when `jittered`.
    pub m_inv: [f64; 9],
    pub jittered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminantEstimate {
    /// Illuminant in the learned working space.
    pub l_m: [f64; 3],
    /// Unit-norm illuminant in the camera's space.
    pub l: [f64; 3],
    pub mapping: MappingMatrix,
}

/// Graph nodes of one forward pass.
pub struct Trace {
    /// Bound parameters, in [`Model::params`] order.
    pub params: Vec<Var>,
    pub l_m: Var,
    /// `M⁻¹ ℓ̂_m` before normalization.
    pub est: Var,
    pub mapping: MappingMatrix,
}

/// Both networks with their histogram blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub mapping: Branch,
    pub estimation: Branch,
}

fn to_array<const N: usize>(t: &Tensor) -> [f64; N] {
    t.data().try_into().expect("fixed-size model output")
}

impl Model {
    /// Xavier-initialized weights, zero biases, histogram learnables at their
    /// configured initial values.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Model {
            mapping: Branch::new("map", &config, 9, derive_seed(seed, 0))?,
            estimation: Branch::new("est", &config, 3, derive_seed(seed, 1))?,
            config,
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.mapping.params().chain(self.estimation.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.mapping.params_mut().chain(self.estimation.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    /// A copy with cleared gradients and optimizer state.
    pub fn frozen(&self) -> Model {
        let mut m = self.clone();
        for p in m.params_mut() {
            p.grad = None;
            p.adam = AdamState::new(p.tensor.len());
        }
        m
    }

    /// Euclidean norm over every parameter value.
    pub fn param_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.tensor.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Record the pipeline for `pixels` on `g`. Parameters become graph
    /// variables when `trainable`, constants otherwise.
    pub fn trace(&self, g: &mut Graph, pixels: &PixelSet, image: &str, trainable: bool) -> Result<Trace> {
        if pixels.is_empty() {
            return Err(Error::InvalidInput(format!("{image}: no unmasked pixels")));
        }
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| {
                let t = p.tensor.clone();
                if trainable {
                    g.variable(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        let k = pixels.len();
        let x = g.constant(Tensor::new(vec![3, k], pixels.channel_major())?);
        let weights: Arc<[f64]> = pixels.weights.clone().into();

        let v = self.mapping.trace(g, x, weights.clone(), &params[..BRANCH_PARAMS])?;
        let m = mapping_node(g, v, self.config.network.matrix_eps)?;
        let m_val: [f64; 9] = to_array(g.value(m));
        let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed(&m_val));
        let inversion = invert_with_jitter(&m_val, &self.config.network, &mut rng, image)?;
        let m_inverted = match inversion.offset {
            Some(e) => {
                let e = g.constant(Tensor::new(vec![3, 3], e.to_vec())?);
                g.add(m, e)?
            }
            None => m,
        };

        let xm = g.matmul(m, x)?;
        let l_m = self.estimation.trace(g, xm, weights, &params[BRANCH_PARAMS..])?;
        let m_inv = g.inverse3(m_inverted)?;
        let col = g.reshape(l_m, &[3, 1])?;
        let est = g.matmul(m_inv, col)?;
        let est = g.reshape(est, &[3])?;

        let mapping = MappingMatrix {
            v: to_array(g.value(v)),
            m: m_val,
            m_inv: to_array(g.value(m_inv)),
            jittered: inversion.jittered(),
        };
        Ok(Trace {
            params,
            l_m,
            est,
            mapping,
        })
    }

    pub fn forward_pixels(&self, pixels: &PixelSet, image: &str) -> Result<IlluminantEstimate> {
        let mut g = Graph::new();
        let t = self.trace(&mut g, pixels, image, false)?;
        let est: [f64; 3] = to_array(g.value(t.est));
        let n = (est[0] * est[0] + est[1] * est[1] + est[2] * est[2]).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::domain("forward", format!("{image}: degenerate estimate {est:?}")));
        }
        Ok(IlluminantEstimate {
            l_m: to_array(g.value(t.l_m)),
            l: est.map(|v| v / n),
            mapping: t.mapping,
        })
    }

    pub fn forward(&self, image: &RawImage) -> Result<IlluminantEstimate> {
        let size = self.config.network.image_size;
        if image.width != size || image.height != size {
            return Err(Error::InvalidInput(format!(
                "{}: expected a {size}×{size} image, got {}×{}",
                image.id, image.width, image.height
            )));
        }
        self.forward_pixels(&image.pixel_set()?, &image.id)
    }
}

/// Forward every image in parallel; failures are reported per image.
pub fn predict_batch(model: &Model, images: &[RawImage]) -> Vec<Result<IlluminantEstimate>> {
    images.par_iter().map(|im| model.forward(im)).collect()
}
