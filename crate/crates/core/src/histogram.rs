//! Differentiable RGB-uv histogram.
//!
//! For each of the three layers `c` the histogram is
//!
//! ```text
//! H(u, v, c) = sqrt( s_c · Σ_i w_i · y_i · exp(-|u_ci - u| / σ_c²) · exp(-|v_ci - v| / σ_c²) )
//! ```
//!
//! where `y_i = ‖(R, G, B)_i‖`, `w_i` is the pixel multiplicity and
//! `(u_ci, v_ci)` are log-ratio chroma coordinates:
//!
//! | layer | u            | v            |
//! |-------|--------------|--------------|
//! | 0     | ln(R/G + ε)  | ln(R/B + ε)  |
//! | 1     | ln(G/R + ε)  | ln(G/B + ε)  |
//! | 2     | ln(B/R + ε)  | ln(B/G + ε)  |
//!
//! Scale and fall-off are learned through `s_c = exp(ŝ_c)`, `σ_c = exp(σ̂_c)`.
//! The output tensor is laid out `[layer, u, v]`.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::PixelSet;
use crate::error::{Error, Result};
use crate::tensor::{gemm, CustomOp, Graph, Parameter, Tensor, Var};

/// (numerator, denominator) channels of the u and v coordinates per layer.
const LAYER_CHANNELS: [[(usize, usize); 2]; 3] = [[(0, 1), (0, 2)], [(1, 0), (1, 2)], [(2, 0), (2, 1)]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramConfig {
    /// Bins per axis.
    pub bins: usize,
    /// Center of the first bin, both axes.
    pub range_min: f64,
    /// Center of the last bin, both axes.
    pub range_max: f64,
    /// Added to each ratio inside the logarithm.
    pub eps: f64,
    /// Channels are floored at this value before forming ratios.
    pub pixel_floor: f64,
    pub init_scale: f64,
    pub init_falloff: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            bins: 61,
            range_min: -3.0,
            range_max: 3.0,
            eps: 1e-6,
            pixel_floor: 1e-9,
            init_scale: 1.0,
            init_falloff: 0.25,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidArgument(format!("histogram needs ≥2 bins, got {}", self.bins)));
        }
        if !(self.range_max > self.range_min) {
            return Err(Error::InvalidArgument("histogram range is empty".into()));
        }
        if !(self.eps >= 0.0) || !(self.pixel_floor > 0.0) {
            return Err(Error::InvalidArgument("eps must be ≥0 and pixel_floor >0".into()));
        }
        if !(self.init_scale > 0.0) || !(self.init_falloff > 0.0) {
            return Err(Error::InvalidArgument("initial scale and fall-off must be positive".into()));
        }
        Ok(())
    }

    /// Bin centers, shared by both axes.
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.range_max - self.range_min) / (self.bins - 1) as f64;
        (0..self.bins).map(|i| self.range_min + step * i as f64).collect()
    }
}

/// Learnable scale and fall-off of one histogram block.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramParams {
    pub config: HistogramConfig,
    /// `ln s_c`
    pub log_scale: Parameter,
    /// `ln σ_c`
    pub log_falloff: Parameter,
}

impl HistogramParams {
    pub fn new(config: HistogramConfig, prefix: &str) -> Result<Self> {
        config.validate()?;
        let ls = Tensor::from_vec(vec![config.init_scale.ln(); 3]);
        let lf = Tensor::from_vec(vec![config.init_falloff.ln(); 3]);
        Ok(HistogramParams {
            config,
            log_scale: Parameter::new(format!("{prefix}.log_scale"), ls),
            log_falloff: Parameter::new(format!("{prefix}.log_falloff"), lf),
        })
    }

    pub fn scale(&self) -> [f64; 3] {
        let d = self.log_scale.tensor.data();
        [d[0].exp(), d[1].exp(), d[2].exp()]
    }

    pub fn falloff(&self) -> [f64; 3] {
        let d = self.log_falloff.tensor.data();
        [d[0].exp(), d[1].exp(), d[2].exp()]
    }

    /// Set `s_c` directly; zero is allowed and silences a layer.
    pub fn set_scale(&mut self, s: [f64; 3]) {
        self.log_scale.tensor.data_mut().copy_from_slice(&s.map(|v| v.ln() as f32 as f64));
    }

    pub fn set_falloff(&mut self, sigma: [f64; 3]) {
        self.log_falloff.tensor.data_mut().copy_from_slice(&sigma.map(|v| v.ln() as f32 as f64));
    }
}

/// An `m×m×3` histogram feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbUvHistogram {
    /// Shape `[3, m, m]`.
    pub values: Tensor,
    pub source: String,
}

impl RgbUvHistogram {
    /// Flat `u,v,c,value` CSV for plotting.
    pub fn write_csv(&self, grid: &[f64], out: &mut impl Write) -> std::io::Result<()> {
        let m = grid.len();
        writeln!(out, "u,v,c,value")?;
        for c in 0..3 {
            for (a, u) in grid.iter().enumerate() {
                for (b, v) in grid.iter().enumerate() {
                    writeln!(out, "{u},{v},{c},{}", self.values.data()[(c * m + a) * m + b])?;
                }
            }
        }
        Ok(())
    }
}

fn floored_log_ratio(a: f64, b: f64, eps: f64, floor: f64) -> f64 {
    (a.max(floor) / b.max(floor) + eps).ln()
}

struct HistogramOp {
    grid: Vec<f64>,
    eps: f64,
    floor: f64,
    weights: Arc<[f64]>,
}

impl HistogramOp {
    /// Kernel matrix `exp(-|coord_j - grid_a| / tau)` as `K×m`.
    fn kernel(&self, coords: &[f64], tau: f64) -> Vec<f64> {
        let m = self.grid.len();
        let mut out = Vec::with_capacity(coords.len() * m);
        for &x in coords {
            out.extend(self.grid.iter().map(|g| (-(x - g).abs() / tau).exp()));
        }
        out
    }

    fn coords(&self, px: &[f64], k: usize, (num, den): (usize, usize)) -> Vec<f64> {
        (0..k)
            .map(|j| floored_log_ratio(px[num * k + j], px[den * k + j], self.eps, self.floor))
            .collect()
    }

    fn intensity(px: &[f64], k: usize) -> Vec<f64> {
        (0..k)
            .map(|j| (px[j].powi(2) + px[k + j].powi(2) + px[2 * k + j].powi(2)).sqrt())
            .collect()
    }

    fn forward(&self, px: &[f64], k: usize, log_scale: &[f64], log_falloff: &[f64]) -> Tensor {
        let m = self.grid.len();
        let y = Self::intensity(px, k);
        let q: Vec<f64> = y.iter().zip(self.weights.iter()).map(|(y, w)| y * w).collect();
        let mut out = vec![0.0; 3 * m * m];
        for (c, pairs) in LAYER_CHANNELS.iter().enumerate() {
            let s = log_scale[c].exp();
            let tau = (2.0 * log_falloff[c]).exp();
            let mut aq = self.kernel(&self.coords(px, k, pairs[0]), tau);
            let b = self.kernel(&self.coords(px, k, pairs[1]), tau);
            for (row, qj) in aq.chunks_mut(m).zip(&q) {
                row.iter_mut().for_each(|v| *v *= qj);
            }
            let layer = &mut out[c * m * m..(c + 1) * m * m];
            gemm(m, k, m, &aq, true, &b, false, 0.0, layer);
            layer.iter_mut().for_each(|v| *v = (s * v.max(0.0)).sqrt());
        }
        Tensor::new(vec![3, m, m], out).expect("histogram shape")
    }
}

impl CustomOp for HistogramOp {
    fn name(&self) -> &'static str {
        "rgb_uv_histogram"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let px = inputs[0].data();
        let k = inputs[0].shape()[1];
        let (log_scale, log_falloff) = (inputs[1].data(), inputs[2].data());
        let m = self.grid.len();
        let y = Self::intensity(px, k);
        let mut gx = vec![0.0; 3 * k];
        let mut g_ls = vec![0.0; 3];
        let mut g_lf = vec![0.0; 3];
        let mut dq = vec![0.0; k];

        for (c, pairs) in LAYER_CHANNELS.iter().enumerate() {
            let s = log_scale[c].exp();
            let tau = (2.0 * log_falloff[c]).exp();
            let h = &output.data()[c * m * m..(c + 1) * m * m];
            let gh = &grad[c * m * m..(c + 1) * m * m];

            // H = sqrt(s K): dH/dŝ = H/2, dH/dK = s / 2H (zero where H = 0)
            g_ls[c] = gh.iter().zip(h).map(|(g, h)| g * h / 2.0).sum();
            let gk: Vec<f64> = gh
                .iter()
                .zip(h)
                .map(|(g, &h)| if h > 0.0 { g * s / (2.0 * h) } else { 0.0 })
                .collect();
            if gk.iter().all(|&v| v == 0.0) {
                continue;
            }

            let u = self.coords(px, k, pairs[0]);
            let v = self.coords(px, k, pairs[1]);
            let a = self.kernel(&u, tau);
            let b = self.kernel(&v, tau);
            let q: Vec<f64> = y.iter().zip(self.weights.iter()).map(|(y, w)| y * w).collect();
            let aq: Vec<f64> = a
                .chunks(m)
                .zip(&q)
                .flat_map(|(row, qj)| row.iter().map(move |x| x * qj))
                .collect();

            // K = Aqᵀ B
            let mut d_aq = vec![0.0; k * m];
            gemm(k, m, m, &b, false, &gk, true, 0.0, &mut d_aq);
            let mut d_b = vec![0.0; k * m];
            gemm(k, m, m, &aq, false, &gk, false, 0.0, &mut d_b);

            let mut d_tau = 0.0;
            for j in 0..k {
                let (arow, brow) = (&a[j * m..(j + 1) * m], &b[j * m..(j + 1) * m]);
                let (darow, dbrow) = (&d_aq[j * m..(j + 1) * m], &d_b[j * m..(j + 1) * m]);
                dq[j] += darow.iter().zip(arow).map(|(d, a)| d * a).sum::<f64>();

                let mut du = 0.0;
                let mut dv = 0.0;
                for i in 0..m {
                    let ga = darow[i] * q[j] * arow[i];
                    let du_ = u[j] - self.grid[i];
                    du -= ga * du_.signum() * (du_ != 0.0) as u8 as f64 / tau;
                    d_tau += ga * du_.abs() / (tau * tau);

                    let gb = dbrow[i] * brow[i];
                    let dv_ = v[j] - self.grid[i];
                    dv -= gb * dv_.signum() * (dv_ != 0.0) as u8 as f64 / tau;
                    d_tau += gb * dv_.abs() / (tau * tau);
                }
                for (d, (num, den)) in [(du, pairs[0]), (dv, pairs[1])] {
                    let (xa, xb) = (px[num * k + j], px[den * k + j]);
                    let (fa, fb) = (xa.max(self.floor), xb.max(self.floor));
                    let denom = fa + self.eps * fb;
                    if xa > self.floor {
                        gx[num * k + j] += d / denom;
                    }
                    if xb > self.floor {
                        gx[den * k + j] -= d * fa / (fb * denom);
                    }
                }
            }
            // τ = σ² = exp(2σ̂)
            g_lf[c] = d_tau * 2.0 * tau;
        }

        for j in 0..k {
            if y[j] > 0.0 {
                let dy = dq[j] * self.weights[j];
                for ch in 0..3 {
                    gx[ch * k + j] += dy * px[ch * k + j] / y[j];
                }
            }
        }
        vec![Some(gx), Some(g_ls), Some(g_lf)]
    }
}

/// Record the histogram of a `3×K` pixel matrix on `g`.
///
/// `weights` holds one multiplicity per column of `pixels`.
pub fn histogram_node(
    g: &mut Graph,
    pixels: Var,
    weights: Arc<[f64]>,
    log_scale: Var,
    log_falloff: Var,
    config: &HistogramConfig,
) -> Result<Var> {
    let pt = g.value(pixels);
    let shape = pt.shape();
    if shape.len() != 2 || shape[0] != 3 || shape[1] != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "histogram expects a 3×{} pixel matrix, got {shape:?}",
            weights.len()
        )));
    }
    let k = shape[1];
    if let Some(i) = pt.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value at pixel {}", i % k)));
    }
    let op = HistogramOp {
        grid: config.grid(),
        eps: config.eps,
        floor: config.pixel_floor,
        weights,
    };
    let out = op.forward(pt.data(), k, g.value(log_scale).data(), g.value(log_falloff).data());
    Ok(g.custom(&[pixels, log_scale, log_falloff], out, Box::new(op)))
}

/// Histogram of a pixel set with fixed parameters.
pub fn compute_histogram(pixels: &PixelSet, params: &HistogramParams) -> Result<RgbUvHistogram> {
    if pixels.is_empty() {
        return Err(Error::InvalidInput("histogram of an empty pixel set".into()));
    }
    let mut g = Graph::new();
    let k = pixels.len();
    let x = g.constant(Tensor::new(vec![3, k], pixels.channel_major())?);
    let ls = g.constant(params.log_scale.tensor.clone());
    let lf = g.constant(params.log_falloff.tensor.clone());
    let h = histogram_node(&mut g, x, pixels.weights.clone().into(), ls, lf, &params.config)?;
    Ok(RgbUvHistogram {
        values: g.value(h).clone(),
        source: String::new(),
    })
}

/// Worst deviation between autograd and central differences, per input group.
///
/// A deviation is `|a - f| / max(|a|, |f|)`, or 0 when `|a - f| ≤ 1e-5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub scale: f64,
    pub falloff: f64,
    pub image: f64,
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        self.scale.max(self.falloff).max(self.image)
    }
}

pub(crate) fn deviation(a: f64, f: f64) -> f64 {
    let d = (a - f).abs();
    if d <= 1e-5 {
        0.0
    } else {
        d / a.abs().max(f.abs())
    }
}

/// Check the histogram's gradients w.r.t. `ŝ`, `σ̂` and every pixel value
/// against central differences (`h = 1e-4`) of a fixed random projection of
/// the output. Meant for small images.
pub fn histogram_gradcheck(params: &HistogramParams, pixels: &PixelSet) -> Result<GradcheckReport> {
    const H: f64 = 1e-4;
    let k = pixels.len();
    let m = params.config.bins;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9c);
    let proj: Vec<f64> = (0..3 * m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weights: Arc<[f64]> = pixels.weights.clone().into();

    let eval = |x: &[f64], ls: &[f64], lf: &[f64], track: bool| -> Result<(f64, Option<[Vec<f64>; 3]>)> {
        let mut g = Graph::new();
        let mk = |g: &mut Graph, t: Tensor| if track { g.variable(t) } else { g.constant(t) };
        let xv = mk(&mut g, Tensor::new(vec![3, k], x.to_vec())?);
        let lsv = mk(&mut g, Tensor::from_vec(ls.to_vec()));
        let lfv = mk(&mut g, Tensor::from_vec(lf.to_vec()));
        let h = histogram_node(&mut g, xv, weights.clone(), lsv, lfv, &params.config)?;
        let p = g.constant(Tensor::new(vec![3, m, m], proj.clone())?);
        let loss = g.dot(h, p)?;
        let val = g.value(loss).item();
        if !track {
            return Ok((val, None));
        }
        let grads = g.backward(loss)?;
        let get = |v: Var, n: usize| grads.get(v).map_or(vec![0.0; n], <[f64]>::to_vec);
        Ok((val, Some([get(xv, 3 * k), get(lsv, 3), get(lfv, 3)])))
    };

    let x0 = pixels.channel_major();
    let ls0 = params.log_scale.tensor.data().to_vec();
    let lf0 = params.log_falloff.tensor.data().to_vec();
    let (_, grads) = eval(&x0, &ls0, &lf0, true)?;
    let [gx, gls, glf] = grads.expect("tracked");

    let mut worst = [0.0f64; 3];
    let inputs = [x0, ls0, lf0];
    let analytic = [gx, gls, glf];
    for which in 0..3 {
        for i in 0..inputs[which].len() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[which][i] += H;
            minus[which][i] -= H;
            let fp = eval(&plus[0], &plus[1], &plus[2], false)?.0;
            let fm = eval(&minus[0], &minus[1], &minus[2], false)?.0;
            let fd = (fp - fm) / (2.0 * H);
            worst[which] = worst[which].max(deviation(analytic[which][i], fd));
        }
    }
    Ok(GradcheckReport {
        image: worst[0],
        scale: worst[1],
        falloff: worst[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_pixels(seed: u64, n: usize) -> PixelSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PixelSet::from_colors(
            (0..n)
                .map(|_| [rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)])
                .collect(),
        )
    }

    fn params() -> HistogramParams {
        HistogramParams::new(HistogramConfig::default(), "h").unwrap()
    }

    /// Direct evaluation of the histogram formula, one entry at a time.
    fn brute_force(px: &PixelSet, p: &HistogramParams, c: usize, a: usize, b: usize) -> f64 {
        let grid = p.config.grid();
        let (s, sigma) = (p.scale()[c], p.falloff()[c]);
        let eps = p.config.eps;
        let f = p.config.pixel_floor;
        let [(un, ud), (vn, vd)] = LAYER_CHANNELS[c];
        let mut acc = 0.0;
        for (col, w) in px.colors.iter().zip(&px.weights) {
            let y = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
            let u = (col[un].max(f) / col[ud].max(f) + eps).ln();
            let v = (col[vn].max(f) / col[vd].max(f) + eps).ln();
            acc += w * y * (-(u - grid[a]).abs() / sigma.powi(2)).exp()
                * (-(v - grid[b]).abs() / sigma.powi(2)).exp();
        }
        (s * acc).sqrt()
    }

    #[test]
    fn defaults_match_design() {
        let cfg = HistogramConfig::default();
        let grid = cfg.grid();
        assert_eq!(grid.len(), 61);
        assert_eq!(grid[0], -3.0);
        assert!((grid[60] - 3.0).abs() < 1e-12);
        assert!((grid[1] - grid[0] - 0.1).abs() < 1e-12);
        let p = params();
        assert!((p.scale()[0] - 1.0).abs() < 1e-7);
        assert!((p.falloff()[2] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn matches_brute_force_formula() {
        let px = random_pixels(1, 7);
        let mut p = params();
        p.set_scale([0.5, 1.0, 2.0]);
        p.set_falloff([0.3, 0.25, 0.4]);
        let h = compute_histogram(&px, &p).unwrap();
        let m = 61;
        for (c, a, b) in [(0, 30, 30), (1, 25, 40), (2, 33, 29), (0, 0, 60), (2, 31, 31)] {
            let got = h.values.data()[(c * m + a) * m + b];
            let want = brute_force(&px, &p, c, a, b);
            assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "({c},{a},{b}) {got} vs {want}");
        }
    }

    #[test]
    fn zero_image_gives_zero_histogram() {
        let px = PixelSet::from_colors(vec![[0.0; 3]; 9]);
        let h = compute_histogram(&px, &params()).unwrap();
        assert!(h.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gray_pixel_peaks_at_origin_bin() {
        let mut cfg = HistogramConfig::default();
        cfg.eps = 0.0;
        cfg.bins = 60; // no bin at 0: nearest centers at ±δ
        let p = HistogramParams::new(cfg.clone(), "h").unwrap();
        let grid = cfg.grid();
        let px = PixelSet::from_colors(vec![[1.0, 1.0, 1.0]]);
        let h = compute_histogram(&px, &p).unwrap();
        let m = cfg.bins;
        let nearest = (0..m).min_by(|&a, &b| grid[a].abs().total_cmp(&grid[b].abs())).unwrap();
        let delta = grid[nearest].abs();
        let sigma2 = p.falloff()[0].powi(2);
        let s = p.scale()[0];
        let want = (s * 3f64.sqrt() * (-2.0 * delta / sigma2).exp()).sqrt();
        for c in 0..3 {
            let layer = &h.values.data()[c * m * m..(c + 1) * m * m];
            let peak = layer.iter().cloned().fold(0.0, f64::max);
            assert!((peak - want).abs() < 1e-12 * want);
            assert!((layer[nearest * m + nearest] - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn exposure_scales_by_sqrt_k() {
        let px = random_pixels(2, 20);
        let p = params();
        let h = compute_histogram(&px, &p).unwrap();
        for k in [0.25, 4.0] {
            let hk = compute_histogram(&px.scaled(k), &p).unwrap();
            for (a, b) in h.values.data().iter().zip(hk.values.data()) {
                assert!((b - k.sqrt() * a).abs() <= 1e-12 * b.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn zero_scale_silences_layer_and_its_image_gradient() {
        let px = random_pixels(3, 4);
        let mut p = params();
        p.set_scale([1.0, 0.0, 1.0]);
        let h = compute_histogram(&px, &p).unwrap();
        let m = 61;
        assert!(h.values.data()[m * m..2 * m * m].iter().all(|&v| v == 0.0));

        // gradient of the layer-1 sum w.r.t. the image is zero
        let mut g = Graph::new();
        let k = px.len();
        let x = g.variable(Tensor::new(vec![3, k], px.channel_major()).unwrap());
        let ls = g.constant(p.log_scale.tensor.clone());
        let lf = g.constant(p.log_falloff.tensor.clone());
        let hv = histogram_node(&mut g, x, px.weights.clone().into(), ls, lf, &p.config).unwrap();
        let mut mask = vec![0.0; 3 * m * m];
        mask[m * m..2 * m * m].fill(1.0);
        let mv = g.constant(Tensor::new(vec![3, m, m], mask).unwrap());
        let loss = g.dot(hv, mv).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradcheck_on_random_4x4_image() {
        let px = random_pixels(4, 16);
        let mut p = params();
        p.set_scale([0.8, 1.3, 0.6]);
        p.set_falloff([0.45, 0.6, 0.5]);
        let report = histogram_gradcheck(&p, &px).unwrap();
        assert!(report.max() < 1e-3, "{report:?}");
    }

    #[test]
    fn wider_falloff_raises_entropy() {
        let px = random_pixels(5, 16);
        let entropy = |h: &RgbUvHistogram| {
            let total: f64 = h.values.data().iter().sum();
            -h.values
                .data()
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| (v / total) * (v / total).ln())
                .sum::<f64>()
        };
        let mut p = params();
        let base = entropy(&compute_histogram(&px, &p).unwrap());
        p.set_falloff(p.falloff().map(|s| 2.0 * s));
        let wide = entropy(&compute_histogram(&px, &p).unwrap());
        assert!(wide >= base, "{wide} < {base}");
    }

    #[test]
    fn swapping_red_and_green_swaps_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = params();
        let m = 61;
        for _ in 0..5 {
            let px = random_pixels(rng.gen(), 3);
            let swapped = PixelSet::from_colors(px.colors.iter().map(|c| [c[1], c[0], c[2]]).collect());
            let h = compute_histogram(&px, &p).unwrap();
            let hs = compute_histogram(&swapped, &p).unwrap();
            let at = |t: &RgbUvHistogram, c: usize, a: usize, b: usize| t.values.data()[(c * m + a) * m + b];
            let close = |x: f64, y: f64| assert!((x - y).abs() <= 1e-13 * x.abs().max(y.abs()), "{x} vs {y}");
            for a in 0..m {
                for b in 0..m {
                    // layer 0 (R/G, R/B) ↔ layer 1 (G/R, G/B)
                    close(at(&hs, 0, a, b), at(&h, 1, a, b));
                    close(at(&hs, 1, a, b), at(&h, 0, a, b));
                    // layer 2 (B/R, B/G) has its axes exchanged
                    close(at(&hs, 2, a, b), at(&h, 2, b, a));
                }
            }
        }
    }

    #[test]
    fn non_finite_pixel_is_rejected() {
        let px = PixelSet::from_colors(vec![[0.5, 0.5, 0.5], [0.5, f64::INFINITY, 0.5]]);
        let err = compute_histogram(&px, &params()).unwrap_err();
        assert!(err.to_string().contains("pixel 1"), "{err}");
    }

    #[test]
    fn csv_export_lists_every_bin() {
        let mut cfg = HistogramConfig::default();
        cfg.bins = 3;
        let p = HistogramParams::new(cfg.clone(), "h").unwrap();
        let h = compute_histogram(&random_pixels(7, 2), &p).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&cfg.grid(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 27);
        assert!(text.starts_with("u,v,c,value\n-3,-3,0,"));
    }
}
