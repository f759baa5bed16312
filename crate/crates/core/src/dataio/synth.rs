//! Synthetic multi-sensor dataset generator.
//!
//! Scenes are Voronoi mosaics of flat reflectance patches lit by one
//! illuminant (diagonal model in a canonical space). Each simulated sensor is
//! a positive, well-conditioned 3×3 matrix applied to both the image and the
//! illuminant, so the same scene has a different raw ground truth per sensor.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{write_png16, write_rawf, RawImage, THUMBNAIL_SIZE};
use super::manifest::{normalize3, DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor::invert3;

/// Upper bound on a sensor matrix's condition number.
pub const MAX_SENSOR_CONDITION: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Rawf,
    Png16,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scenes: usize,
    pub sensors: usize,
    pub seed: u64,
    pub size: usize,
    pub format: ImageFormat,
    /// Rebalance every scene so its area-weighted mean reflectance is achromatic.
    pub gray_balanced: bool,
}

impl SynthConfig {
    pub fn new(scenes: usize, sensors: usize, seed: u64) -> Self {
        SynthConfig {
            scenes,
            sensors,
            seed,
            size: THUMBNAIL_SIZE,
            format: ImageFormat::Rawf,
            gray_balanced: false,
        }
    }
}

/// One canonical scene: a patch label per pixel and a reflectance per patch.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub labels: Vec<u16>,
    pub reflectances: Vec<[f64; 3]>,
    /// Unnormalized canonical illuminant.
    pub illuminant: [f64; 3],
}

/// The scenes and sensors of a generated dataset, rendered on demand.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub sensors: Vec<[f64; 9]>,
    pub scenes: Vec<SynthScene>,
}

#[derive(Serialize, Deserialize)]
struct SynthMeta {
    config: SynthConfig,
    sensors: Vec<[f64; 9]>,
    canonical_illuminants: Vec<[f64; 3]>,
}

pub fn camera_id(sensor: usize) -> String {
    format!("synth_{sensor}")
}

fn mat_vec(a: &[f64; 9], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| a[r * 3] * v[0] + a[r * 3 + 1] * v[1] + a[r * 3 + 2] * v[2])
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖A‖_F‖A⁻¹‖_F`, an upper bound on the spectral condition number.
pub fn condition_bound(a: &[f64; 9]) -> f64 {
    match invert3(a) {
        Some((inv, _)) => frobenius(a) * frobenius(&inv),
        None => f64::INFINITY,
    }
}

/// Random sensor matrix: per-channel gains times identity plus positive crosstalk.
pub fn random_sensor(rng: &mut impl Rng) -> [f64; 9] {
    loop {
        let gains: [f64; 3] = [rng.gen_range(0.5..1.0), rng.gen_range(0.8..1.5), rng.gen_range(0.4..1.0)];
        let mut a = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                let base = if r == c { 1.0 } else { rng.gen_range(0.02..0.35) };
                a[r * 3 + c] = gains[r] * base;
            }
        }
        if condition_bound(&a) <= MAX_SENSOR_CONDITION {
            return a;
        }
    }
}

/// Illuminant chromaticity with `r, b ∈ [0.2, 0.45]`, `g = 1 - r - b ≥ 0.15`.
pub fn random_illuminant(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let r = rng.gen_range(0.2..=0.45);
        let b = rng.gen_range(0.2..=0.45);
        let g = 1.0 - r - b;
        if g >= 0.15 {
            return [r, g, b];
        }
    }
}

fn random_reflectance(rng: &mut impl Rng) -> [f64; 3] {
    let albedo = rng.gen_range(0.1..0.8);
    let sat = if rng.gen_bool(0.3) {
        rng.gen_range(0.0..0.05)
    } else {
        rng.gen_range(0.15..0.9)
    };
    let theta = rng.gen_range(0.0..2.0 * PI);
    let e1 = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
    let e2 = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
    [0, 1, 2].map(|c| {
        let z = sat * (theta.cos() * e1[c] + theta.sin() * e2[c]);
        (albedo * z.exp()).clamp(0.05, 0.95)
    })
}

fn random_scene(rng: &mut impl Rng, size: usize, gray_balanced: bool) -> SynthScene {
    let k = rng.gen_range(8..=64usize);
    let seeds: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64)))
        .collect();
    let mut labels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let nearest = seeds
                .iter()
                .enumerate()
                .map(|(i, &(sx, sy))| (i, (sx - px).powi(2) + (sy - py).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap();
            labels.push(nearest as u16);
        }
    }
    let mut reflectances: Vec<[f64; 3]> = (0..k).map(|_| random_reflectance(rng)).collect();
    if gray_balanced {
        let mut mean = [0.0; 3];
        for &l in &labels {
            for c in 0..3 {
                mean[c] += reflectances[l as usize][c];
            }
        }
        let target = mean.iter().sum::<f64>() / 3.0;
        for r in reflectances.iter_mut() {
            for c in 0..3 {
                r[c] *= target / mean[c];
            }
        }
        let peak = reflectances.iter().flatten().cloned().fold(0.0, f64::max);
        if peak > 0.95 {
            let s = 0.95 / peak;
            reflectances.iter_mut().flatten().for_each(|v| *v *= s);
        }
    }
    SynthScene {
        labels,
        reflectances,
        illuminant: random_illuminant(rng),
    }
}

impl SynthDataset {
    /// Draw sensors and scenes. Requires at least one scene and two sensors.
    pub fn generate(config: SynthConfig) -> Result<Self> {
        if config.sensors < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 sensors, got {}",
                config.sensors
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sensors = (0..config.sensors).map(|_| random_sensor(&mut rng)).collect();
        Self::with_sensors(config, sensors)
    }

    /// Draw scenes for a given set of sensor matrices.
    pub fn with_sensors(config: SynthConfig, sensors: Vec<[f64; 9]>) -> Result<Self> {
        if config.scenes == 0 || sensors.is_empty() || config.size == 0 {
            return Err(Error::InvalidArgument(
                "need at least one scene, one sensor and a nonzero size".into(),
            ));
        }
        let scenes = (0..config.scenes)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(1 + i as u64);
                random_scene(&mut rng, config.size, config.gray_balanced)
            })
            .collect();
        Ok(SynthDataset {
            config,
            sensors,
            scenes,
        })
    }

    pub fn canonical_illuminant(&self, scene: usize) -> [f64; 3] {
        normalize3(self.scenes[scene].illuminant)
    }

    pub fn image_path(&self, scene: usize, sensor: usize) -> String {
        let ext = match self.config.format {
            ImageFormat::Rawf => "rawf",
            ImageFormat::Png16 => "png",
        };
        format!("{}/scene_{scene:05}.{ext}", camera_id(sensor))
    }

    /// Scene `scene` as seen by sensor `sensor`, exposed so its brightest
    /// channel sits in `[0.6, 0.9]`.
    pub fn render(&self, scene: usize, sensor: usize) -> RawImage {
        let sc = &self.scenes[scene];
        let a = &self.sensors[sensor];
        let lit: Vec<[f64; 3]> = sc
            .reflectances
            .iter()
            .map(|r| mat_vec(a, [0, 1, 2].map(|c| sc.illuminant[c] * r[c])))
            .collect();
        let peak = lit.iter().flatten().cloned().fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_e4b0);
        rng.set_stream(((scene as u64) << 16) | sensor as u64);
        let scale = rng.gen_range(0.6..0.9) / peak;
        let colors: Vec<[f32; 3]> = lit.iter().map(|c| c.map(|v| (v * scale) as f32)).collect();
        let size = self.config.size;
        let mut img = RawImage::new(
            size,
            size,
            sc.labels.iter().map(|&l| colors[l as usize]).collect(),
        )
        .expect("label map matches image size");
        img.id = self.image_path(scene, sensor);
        img.camera_id = camera_id(sensor);
        img.gt_illuminant = normalize3(mat_vec(a, sc.illuminant));
        img
    }

    /// Write every image plus `manifest.csv` and `synth_meta.json` under `out`.
    pub fn write(&self, out: &Path) -> Result<DatasetManifest> {
        for k in 0..self.sensors.len() {
            let dir = out.join(camera_id(k));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut entries = Vec::with_capacity(self.scenes.len() * self.sensors.len());
        for k in 0..self.sensors.len() {
            for s in 0..self.scenes.len() {
                let img = self.render(s, k);
                let path = out.join(&img.id);
                match self.config.format {
                    ImageFormat::Rawf => write_rawf(&path, img.width, img.height, &img.pixels)?,
                    ImageFormat::Png16 => write_png16(&path, img.width, img.height, &img.pixels)?,
                }
                entries.push(ManifestEntry {
                    image_path: img.id,
                    camera_id: img.camera_id,
                    gt: img.gt_illuminant,
                    mask_path: None,
                });
            }
        }
        let manifest = DatasetManifest {
            root: out.to_path_buf(),
            entries,
        };
        manifest.write(&out.join("manifest.csv"))?;
        let meta = SynthMeta {
            config: self.config.clone(),
            sensors: self.sensors.clone(),
            canonical_illuminants: (0..self.scenes.len()).map(|s| self.canonical_illuminant(s)).collect(),
        };
        let meta_path = out.join("synth_meta.json");
        fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        Ok(manifest)
    }
}

/// Generate `scenes × sensors` images under `out` and return their manifest.
pub fn synth_generate(config: SynthConfig, out: &Path) -> Result<DatasetManifest> {
    SynthDataset::generate(config)?.write(out)
}
