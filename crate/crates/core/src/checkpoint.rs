//! Versioned binary checkpoints.
//!
//! Layout: `b"SIIE"`, `u16` version, `u32` header length, a JSON header,
//! then little-endian `f32` data. The header lists every stored tensor with
//! its section (`param`, `adam_m`, `adam_v`, `best`), shape and element offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Model, ModelConfig};
use crate::training::{LogRow, TrainConfig, TrainRun, TrainState};

pub const MAGIC: &[u8; 4] = b"SIIE";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Section {
    Param,
    AdamM,
    AdamV,
    Best,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    section: Section,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    state: Option<TrainState>,
    #[serde(default)]
    log: Vec<LogRow>,
    /// Optimizer step count per parameter name.
    adam_steps: Vec<(String, u64)>,
    tensors: Vec<TensorEntry>,
    total: usize,
}

/// Everything a checkpoint holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub state: Option<TrainState>,
    pub best: Option<Model>,
    pub log: Vec<LogRow>,
}

impl Checkpoint {
    /// A frozen model with no training state.
    pub fn inference(model: Model) -> Self {
        Checkpoint {
            model,
            train: None,
            state: None,
            best: None,
            log: Vec::new(),
        }
    }

    pub fn from_run(run: &TrainRun, cfg: &TrainConfig) -> Self {
        Checkpoint {
            model: run.model.clone(),
            train: Some(cfg.clone()),
            state: Some(run.state.clone()),
            best: run.best.clone(),
            log: run.log.clone(),
        }
    }

    /// The model to predict with: the best snapshot if any.
    pub fn final_model(&self) -> &Model {
        self.best.as_ref().unwrap_or(&self.model)
    }

    /// Continue training from this checkpoint; `None` for inference-only files.
    pub fn into_run(self) -> Option<TrainRun> {
        Some(TrainRun {
            model: self.model,
            state: self.state?,
            best: self.best,
            log: self.log,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data: Vec<f32> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: &str, section, shape: &[usize], values: &[f64]| {
            tensors.push(TensorEntry {
                name: name.to_owned(),
                section,
                shape: shape.to_vec(),
                offset: data.len(),
            });
            data.extend(values.iter().map(|&v| v as f32));
        };
        for p in self.model.params() {
            push(&p.name, Section::Param, p.shape(), p.tensor.data());
            push(&p.name, Section::AdamM, p.shape(), &p.adam.m);
            push(&p.name, Section::AdamV, p.shape(), &p.adam.v);
        }
        if let Some(best) = &self.best {
            for p in best.params() {
                push(&p.name, Section::Best, p.shape(), p.tensor.data());
            }
        }
        let header = Header {
            model: self.model.config.clone(),
            train: self.train.clone(),
            state: self.state.clone(),
            log: self.log.clone(),
            adam_steps: self.model.params().iter().map(|p| (p.name.clone(), p.adam.step)).collect(),
            tensors,
            total: data.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(10 + json.len() + 4 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < 10 {
            return Err(Error::Corrupt("checkpoint truncated inside the preamble".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Incompatible {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let body = &bytes[10..];
        if body.len() < hlen {
            return Err(Error::Corrupt("checkpoint truncated inside the header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Corrupt(format!("unreadable checkpoint header: {e}")))?;
        let raw = &body[hlen..];
        if raw.len() != 4 * header.total {
            return Err(Error::Corrupt(format!(
                "checkpoint holds {} data bytes, header expects {}",
                raw.len(),
                4 * header.total
            )));
        }
        let value = |i: usize| f32::from_le_bytes(raw[4 * i..4 * i + 4].try_into().unwrap()) as f64;

        let mut model = Model::new(header.model.clone(), 0)
            .map_err(|e| Error::Corrupt(format!("checkpoint model config: {e}")))?;
        let mut best = header
            .tensors
            .iter()
            .any(|t| t.section == Section::Best)
            .then(|| model.clone());
        let find = |name: &str, section: Section| header.tensors.iter().find(|t| t.name == name && t.section == section);

        let fill = |target: &mut Model, sections: &[Section]| -> Result<()> {
            for p in target.params_mut() {
                for &section in sections {
                    let t = find(&p.name, section).ok_or_else(|| {
                        Error::Corrupt(format!("checkpoint lacks {:?} data for `{}`", section, p.name))
                    })?;
                    if t.shape != p.shape() || t.offset + p.tensor.len() > header.total {
                        return Err(Error::Corrupt(format!("bad shape or offset for `{}`", p.name)));
                    }
                    let vals = (t.offset..t.offset + p.tensor.len()).map(value);
                    match section {
                        Section::Param | Section::Best => p.tensor.data_mut().iter_mut().zip(vals).for_each(|(d, v)| *d = v),
                        Section::AdamM => p.adam.m.iter_mut().zip(vals).for_each(|(d, v)| *d = v),
                        Section::AdamV => p.adam.v.iter_mut().zip(vals).for_each(|(d, v)| *d = v),
                    }
                }
            }
            Ok(())
        };
        fill(&mut model, &[Section::Param, Section::AdamM, Section::AdamV])?;
        if let Some(b) = &mut best {
            fill(b, &[Section::Best])?;
        }
        for p in model.params_mut() {
            p.adam.step = header
                .adam_steps
                .iter()
                .find(|(n, _)| *n == p.name)
                .map(|(_, s)| *s)
                .ok_or_else(|| Error::Corrupt(format!("no optimizer step count for `{}`", p.name)))?;
        }
        Ok(Checkpoint {
            model,
            train: header.train,
            state: header.state,
            best,
            log: header.log,
        })
    }
}

/// Write atomically (temp file + rename).
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{RawImage, Sample};
    use crate::histogram::HistogramConfig;
    use crate::networks::NetworkConfig;
    use crate::training::{train_epochs, TrainRun};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(seed: u64) -> Model {
        let mut network = NetworkConfig::with_channels([3, 4, 4]);
        network.image_size = 8;
        Model::new(
            ModelConfig {
                network,
                histogram: HistogramConfig { bins: 11, ..Default::default() },
            },
            seed,
        )
        .unwrap()
    }

    fn samples(n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        (0..n)
            .map(|i| {
                let px = (0..64).map(|_| [rng.gen_range(0.05..0.9f32), rng.gen_range(0.05..0.9), rng.gen_range(0.05..0.9)]).collect();
                let mut im = RawImage::new(8, 8, px).unwrap();
                im.id = format!("s{i}");
                im.gt_illuminant = crate::dataio::normalize3([rng.gen_range(0.2..1.0), 1.0, rng.gen_range(0.2..1.0)]);
                Sample::from_image(&im).unwrap()
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact_with_training_state() {
        let data = samples(6);
        let cfg = TrainConfig { lr: 1e-3, max_epochs: 4, batch_size: 3, ..Default::default() };
        let mut run = TrainRun::new(toy_model(1), &cfg);
        train_epochs(&mut run, &data[..4], &data[4..], &cfg, 2).unwrap();
        let ck = Checkpoint::from_run(&run, &cfg);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let im = &data[0];
        assert_eq!(
            back.final_model().forward_pixels(&im.pixels, "x").unwrap(),
            ck.final_model().forward_pixels(&im.pixels, "x").unwrap()
        );

        // resuming from the file matches uninterrupted training
        let mut resumed = back.into_run().unwrap();
        train_epochs(&mut resumed, &data[..4], &data[4..], &cfg, 10).unwrap();
        train_epochs(&mut run, &data[..4], &data[4..], &cfg, 10).unwrap();
        assert_eq!(resumed, run);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.siie");
        let ck = Checkpoint::inference(toy_model(2));
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);

        let bytes = std::fs::read(&path).unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong_magic), Err(Error::Format(_))));

        let mut wrong_version = bytes.clone();
        wrong_version[4..6].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&wrong_version),
            Err(Error::Incompatible { found: 7, expected: 1 })
        ));

        for cut in [8, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
    }
}
