//! Statistical illuminant estimators: Gray-World, White-Patch,
//! Shades-of-Gray and first/second-order Gray-Edge.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataio::RawImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    GrayWorld,
    WhitePatch,
    ShadesOfGray,
    GrayEdge1,
    GrayEdge2,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] = [
        BaselineMethod::GrayWorld,
        BaselineMethod::WhitePatch,
        BaselineMethod::ShadesOfGray,
        BaselineMethod::GrayEdge1,
        BaselineMethod::GrayEdge2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::GrayWorld => "gray_world",
            BaselineMethod::WhitePatch => "white_patch",
            BaselineMethod::ShadesOfGray => "shades_of_gray",
            BaselineMethod::GrayEdge1 => "gray_edge_1",
            BaselineMethod::GrayEdge2 => "gray_edge_2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::InvalidArgument(format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
        })
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Minkowski exponent; `f64::INFINITY` means the maximum.
    pub minkowski_p: f64,
    /// Gaussian pre-smoothing for Gray-Edge, in pixels.
    pub smoothing_sigma: f64,
}

impl BaselineConfig {
    /// Customary settings for each method.
    pub fn new(method: BaselineMethod) -> Self {
        let (minkowski_p, smoothing_sigma) = match method {
            BaselineMethod::GrayWorld => (1.0, 0.0),
            BaselineMethod::WhitePatch => (f64::INFINITY, 0.0),
            BaselineMethod::ShadesOfGray => (4.0, 0.0),
            BaselineMethod::GrayEdge1 | BaselineMethod::GrayEdge2 => (5.0, 2.0),
        };
        BaselineConfig {
            method,
            minkowski_p,
            smoothing_sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minkowski_p.is_nan() || self.minkowski_p < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "Minkowski p must be ≥ 1, got {}",
                self.minkowski_p
            )));
        }
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing sigma must be finite and ≥ 0, got {}",
                self.smoothing_sigma
            )));
        }
        Ok(())
    }
}

/// Generalized mean `(mean xᵖ)^(1/p)` of non-negative samples, or their
/// maximum for infinite `p`.
fn minkowski(values: impl Iterator<Item = f64> + Clone, p: f64) -> f64 {
    let max = values.clone().fold(0.0, f64::max);
    if p.is_infinite() || max == 0.0 {
        return max;
    }
    if p == 1.0 {
        let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        return s / n as f64;
    }
    // Factor out the maximum so large p cannot underflow.
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v / max).powf(p), n + 1));
    max * (s / n as f64).powf(1.0 / p)
}

fn unit(v: [f64; 3], what: &str) -> Result<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidInput(format!("{what}: degenerate estimate {v:?}")));
    }
    Ok(v.map(|x| x / n))
}

/// Unit-norm illuminant estimate of `image` by `cfg.method`.
pub fn estimate_baseline(image: &RawImage, cfg: &BaselineConfig) -> Result<[f64; 3]> {
    cfg.validate()?;
    let valid: Vec<usize> = (0..image.pixels.len()).filter(|&i| !image.is_masked(i)).collect();
    if valid.is_empty() {
        return Err(Error::InvalidInput(format!("{}: every pixel is masked", image.id)));
    }
    let est = match cfg.method {
        BaselineMethod::GrayWorld => channel_stats(image, &valid, 1.0),
        BaselineMethod::WhitePatch => channel_stats(image, &valid, f64::INFINITY),
        BaselineMethod::ShadesOfGray => channel_stats(image, &valid, cfg.minkowski_p),
        BaselineMethod::GrayEdge1 => gray_edge(image, cfg, 1)?,
        BaselineMethod::GrayEdge2 => gray_edge(image, cfg, 2)?,
    };
    unit(est, &image.id)
}

fn channel_stats(image: &RawImage, valid: &[usize], p: f64) -> [f64; 3] {
    std::array::from_fn(|c| minkowski(valid.iter().map(|&i| image.pixels[i][c] as f64), p))
}

/// 1-D Gaussian taps for `sigma`, radius `⌈3σ⌉`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect()
}

/// Mask-aware Gaussian smoothing: each output is a weighted mean over
/// unmasked, in-image neighbours only. `None` where no such neighbour exists.
fn smooth(image: &RawImage, sigma: f64) -> Vec<Option<[f64; 3]>> {
    let (w, h) = (image.width, image.height);
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;

    // horizontal pass over (weighted sum, weight)
    let mut rows = vec![([0.0f64; 3], 0.0f64); w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = ([0.0; 3], 0.0);
            for (t, k) in taps.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                let i = y * w + xx as usize;
                if image.is_masked(i) {
                    continue;
                }
                for c in 0..3 {
                    acc.0[c] += k * image.pixels[i][c] as f64;
                }
                acc.1 += k;
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for (t, k) in taps.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let (n, d) = rows[yy as usize * w + x];
                for c in 0..3 {
                    num[c] += k * n[c];
                }
                den += k * d;
            }
            if den > 0.0 {
                out[y * w + x] = Some(num.map(|v| v / den));
            }
        }
    }
    out
}

fn gray_edge(image: &RawImage, cfg: &BaselineConfig, order: u8) -> Result<[f64; 3]> {
    let (w, h) = (image.width, image.height);
    let s = smooth(image, cfg.smoothing_sigma);
    // value at (x+dx, y+dy) if that pixel is inside and unmasked
    let at = |x: usize, y: usize, dx: isize, dy: isize| -> Option<[f64; 3]> {
        let (xx, yy) = (x as isize + dx, y as isize + dy);
        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
            return None;
        }
        let i = yy as usize * w + xx as usize;
        if image.is_masked(i) {
            return None;
        }
        s[i]
    };
    let mut mags: Vec<[f64; 3]> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let Some(c0) = at(x, y, 0, 0) else { continue };
            let (Some(l), Some(r), Some(u), Some(d)) = (at(x, y, -1, 0), at(x, y, 1, 0), at(x, y, 0, -1), at(x, y, 0, 1))
            else {
                continue;
            };
            let m = if order == 1 {
                std::array::from_fn(|c| {
                    let fx = (r[c] - l[c]) / 2.0;
                    let fy = (d[c] - u[c]) / 2.0;
                    (fx * fx + fy * fy).sqrt()
                })
            } else {
                let (Some(ul), Some(ur), Some(dl), Some(dr)) =
                    (at(x, y, -1, -1), at(x, y, 1, -1), at(x, y, -1, 1), at(x, y, 1, 1))
                else {
                    continue;
                };
                std::array::from_fn(|c| {
                    let fxx = r[c] - 2.0 * c0[c] + l[c];
                    let fyy = d[c] - 2.0 * c0[c] + u[c];
                    let fxy = (dr[c] - ur[c] - dl[c] + ul[c]) / 4.0;
                    (fxx * fxx + 2.0 * fxy * fxy + fyy * fyy).sqrt()
                })
            };
            mags.push(m);
        }
    }
    if mags.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no unmasked neighbourhood large enough for derivatives",
            image.id
        )));
    }
    Ok(std::array::from_fn(|c| minkowski(mags.iter().map(|m| m[c]), cfg.minkowski_p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::angle_deg;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> RawImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..w * h)
            .map(|_| [rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9)])
            .collect();
        RawImage::new(w, h, px).unwrap()
    }

    fn run(im: &RawImage, m: BaselineMethod) -> [f64; 3] {
        estimate_baseline(im, &BaselineConfig::new(m)).unwrap()
    }

    #[test]
    fn uniform_gray_world() {
        let im = RawImage::new(4, 4, vec![[0.5, 0.25, 0.25]; 16]).unwrap();
        let want = [2.0, 1.0, 1.0].map(|v: f64| v / 6f64.sqrt());
        let got = run(&im, BaselineMethod::GrayWorld);
        assert!(got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn white_patch_takes_channel_maxima() {
        let mut px = vec![[0.1f32, 0.1, 0.1]; 9];
        px[2] = [1.0, 0.2, 0.0];
        px[7] = [0.3, 0.5, 0.25];
        let im = RawImage::new(3, 3, px).unwrap();
        let n = (1.0f64 + 0.25 + 0.0625).sqrt();
        let got = run(&im, BaselineMethod::WhitePatch);
        for (a, b) in got.iter().zip([1.0 / n, 0.5 / n, 0.25 / n]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shades_of_gray_endpoints() {
        for seed in 0..10 {
            let im = random_image(seed, 12, 10);
            let mut cfg = BaselineConfig::new(BaselineMethod::ShadesOfGray);
            cfg.minkowski_p = 1.0;
            assert_eq!(estimate_baseline(&im, &cfg).unwrap(), run(&im, BaselineMethod::GrayWorld));
            cfg.minkowski_p = 64.0;
            let sog = estimate_baseline(&im, &cfg).unwrap();
            assert!(angle_deg(sog, run(&im, BaselineMethod::WhitePatch)).unwrap() < 1.0);
        }
    }

    #[test]
    fn shades_of_gray_climbs_toward_white_patch() {
        for seed in 0..10 {
            let im = random_image(seed + 50, 10, 10);
            let valid: Vec<usize> = (0..100).collect();
            let max = channel_stats(&im, &valid, f64::INFINITY);
            let mut prev = [0.0; 3];
            for p in [1.0, 2.0, 4.0, 8.0, 16.0, 64.0] {
                let m = channel_stats(&im, &valid, p);
                for c in 0..3 {
                    assert!(m[c] >= prev[c] && m[c] <= max[c], "p={p}");
                }
                prev = m;
            }
        }
    }

    #[test]
    fn angle_to_white_patch_can_grow_with_p() {
        // Every channel has mean 0.5 and max 0.9, so p=1 and p=∞ agree on
        // the achromatic direction; G is less spread, so p=2 leaves it.
        let px = vec![[0.9f32, 0.9, 0.9], [0.1, 0.5, 0.1], [0.5, 0.3, 0.5], [0.5, 0.3, 0.5]];
        let im = RawImage::new(2, 2, px).unwrap();
        let wp = run(&im, BaselineMethod::WhitePatch);
        let at = |p: f64| {
            let mut cfg = BaselineConfig::new(BaselineMethod::ShadesOfGray);
            cfg.minkowski_p = p;
            angle_deg(estimate_baseline(&im, &cfg).unwrap(), wp).unwrap()
        };
        assert!(at(1.0) < 1e-5);
        assert!(at(2.0) > 0.5, "{}", at(2.0));
    }

    #[test]
    fn exposure_scaling_leaves_every_method_unchanged() {
        let im = random_image(3, 16, 16);
        for m in BaselineMethod::ALL {
            let a = run(&im, m);
            // powers of two keep the scaled f32 image exact
            for k in [0.25f32, 4.0] {
                let b = run(&im.scaled(k), m);
                assert!(angle_deg(a, b).unwrap() < 1e-6, "{m}");
            }
        }
    }

    #[test]
    fn masked_pixels_never_matter() {
        let im = random_image(4, 16, 16);
        let mask: Vec<bool> = (0..256).map(|i| (i % 16) > 11 || i / 16 < 3).collect();
        let masked = im.clone().with_mask(mask.clone()).unwrap();
        let mut perturbed = masked.clone();
        for (i, p) in perturbed.pixels.iter_mut().enumerate() {
            if mask[i] {
                *p = [0.9, 0.0, 0.7];
            }
        }
        for m in BaselineMethod::ALL {
            assert_eq!(run(&masked, m), run(&perturbed, m), "{m}");
        }
    }

    #[test]
    fn errors() {
        let im = random_image(1, 4, 4);
        let mut cfg = BaselineConfig::new(BaselineMethod::ShadesOfGray);
        cfg.minkowski_p = 0.5;
        assert!(matches!(estimate_baseline(&im, &cfg), Err(Error::InvalidArgument(_))));
        let all = im.clone().with_mask(vec![true; 16]).unwrap();
        assert!(matches!(
            estimate_baseline(&all, &BaselineConfig::new(BaselineMethod::GrayWorld)),
            Err(Error::InvalidInput(_))
        ));
        let err = BaselineMethod::parse("grey").unwrap_err().to_string();
        assert!(err.contains("gray_edge_2"));
        assert_eq!(BaselineMethod::parse("gray_edge_1").unwrap(), BaselineMethod::GrayEdge1);
    }

    #[test]
    fn gray_edge_sees_a_colored_step() {
        // Left half (0.2,0.2,0.2), right half (0.8,0.5,0.2): the edge contrast
        // is (0.6, 0.3, 0).
        let px = (0..20 * 20)
            .map(|i| if i % 20 < 10 { [0.2, 0.2, 0.2] } else { [0.8, 0.5, 0.2] })
            .collect();
        let im = RawImage::new(20, 20, px).unwrap();
        for m in [BaselineMethod::GrayEdge1, BaselineMethod::GrayEdge2] {
            let e = run(&im, m);
            assert!(e[2].abs() < 1e-12);
            let want = (0.8f32 as f64 - 0.2f32 as f64) / (0.5f32 as f64 - 0.2f32 as f64);
            assert!((e[0] / e[1] - want).abs() < 1e-9, "{m}: {e:?}");
        }
    }
}
