//! End-to-end training of both networks.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{scene_key, Sample};
use crate::error::{Error, Result};
use crate::metrics::{recovery_angular_error, recovery_loss_node};
use crate::networks::Model;
use crate::tensor::init::derive_seed;
use crate::tensor::{Adam, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub lr_decay_every_epochs: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Share of scenes held out for model selection; 0 disables validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            beta1: 0.85,
            beta2: 0.99,
            adam_eps: 1e-8,
            batch_size: 8,
            lr_decay_every_epochs: 5,
            lr_decay_factor: 0.5,
            max_epochs: 60,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and ≥ 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 || self.lr_decay_every_epochs == 0 {
            return bad("batch_size and lr_decay_every_epochs must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every_epochs) as i32)
    }

    fn adam(&self, epoch: usize) -> Adam {
        Adam {
            lr: self.lr_at(epoch),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Progress of a run; everything needed to continue it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Learning rate of the last completed epoch.
    pub lr: f64,
    pub best_val_mean_deg: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Shuffles of epoch `e` are drawn from `derive_seed(seed, e)`.
    pub seed: u64,
    pub singular_events: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            lr: cfg.lr,
            best_val_mean_deg: None,
            best_epoch: None,
            seed: cfg.seed,
            singular_events: 0,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss_deg: f64,
    pub val_mean_deg: Option<f64>,
    pub singular_events: usize,
}

pub fn write_log_csv(rows: &[LogRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "step", "lr", "train_loss_deg", "val_mean_deg", "singular_events"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            r.lr.to_string(),
            r.train_loss_deg.to_string(),
            r.val_mean_deg.map_or_else(String::new, |v| v.to_string()),
            r.singular_events.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<training log>", e))?;
    Ok(())
}

/// A training run in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: Model,
    pub state: TrainState,
    /// Snapshot with the best validation error so far, without optimizer state.
    pub best: Option<Model>,
    pub log: Vec<LogRow>,
}

impl TrainRun {
    pub fn new(model: Model, cfg: &TrainConfig) -> Self {
        TrainRun {
            model,
            state: TrainState::new(cfg),
            best: None,
            log: Vec::new(),
        }
    }

    /// The best-validation snapshot, or the current model without validation.
    pub fn final_model(&self) -> &Model {
        self.best.as_ref().unwrap_or(&self.model)
    }
}

/// Split `samples` into (train, validation) by scene: a seeded random
/// `fraction` of the distinct scene keys goes to validation, together with
/// every image of those scenes.
pub fn split_validation(samples: Vec<Sample>, fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let scenes: BTreeSet<String> = samples.iter().map(|s| scene_key(&s.id)).collect();
    let mut scenes: Vec<String> = scenes.into_iter().collect();
    let n_val = (fraction * scenes.len() as f64).round() as usize;
    if fraction <= 0.0 || n_val == 0 || n_val >= scenes.len() {
        return (samples, Vec::new());
    }
    scenes.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
    let val: BTreeSet<String> = scenes.into_iter().take(n_val).collect();
    samples.into_iter().partition(|s| !val.contains(&scene_key(&s.id)))
}

/// Loss (radians) and parameter gradients for one sample, in
/// [`Model::params`] order.
pub fn sample_gradient(model: &Model, sample: &Sample) -> Result<(f64, Vec<Vec<f64>>, bool)> {
    let mut g = Graph::new();
    let trace = model.trace(&mut g, &sample.pixels, &sample.id, true)?;
    let loss = recovery_loss_node(&mut g, sample.gt, trace.est)?;
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    let per_param = model
        .params()
        .iter()
        .zip(&trace.params)
        .map(|(p, v)| grads.take(*v).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        .collect();
    Ok((value, per_param, trace.mapping.jittered))
}

/// Mean recovery error (degrees) of `model` over `samples`. Images whose
/// forward pass fails count as 180°.
pub fn mean_error(model: &Model, samples: &[Sample]) -> f64 {
    let errs: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            model
                .forward_pixels(&s.pixels, &s.id)
                .and_then(|e| recovery_angular_error(s.gt, e.l))
                .unwrap_or(180.0)
        })
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

/// Run up to `epochs` further epochs (never past `cfg.max_epochs`).
pub fn train_epochs(run: &mut TrainRun, train: &[Sample], val: &[Sample], cfg: &TrainConfig, epochs: usize) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let end = (run.state.epoch + epochs).min(cfg.max_epochs);
    while run.state.epoch < end {
        run_epoch(run, train, val, cfg)?;
    }
    Ok(())
}

/// Train a fresh run to `cfg.max_epochs`.
pub fn train(model: Model, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainRun> {
    let mut run = TrainRun::new(model, cfg);
    train_epochs(&mut run, train, val, cfg, cfg.max_epochs)?;
    Ok(run)
}

fn run_epoch(run: &mut TrainRun, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<()> {
    let epoch = run.state.epoch;
    let adam = cfg.adam(epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(run.state.seed, epoch as u64)));

    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut singular = 0usize;
    for batch in order.chunks(cfg.batch_size) {
        let model = &run.model;
        let results: Vec<Result<(f64, Vec<Vec<f64>>, bool)>> =
            batch.par_iter().map(|&i| sample_gradient(model, &train[i])).collect();

        let mut acc: Option<Vec<Vec<f64>>> = None;
        let mut batch_loss = 0.0;
        let mut used = 0usize;
        let non_finite = |run: &TrainRun| Error::NonFiniteLoss {
            epoch,
            step: run.state.step,
            batch: batch.iter().map(|&j| train[j].id.clone()).collect(),
            param_norm: run.model.param_norm(),
        };
        for r in results {
            let (loss, grads, jittered) = match r {
                Ok(x) => x,
                Err(Error::SingularMatrix { image, attempts }) => {
                    log::warn!("epoch {epoch}: skipping {image}, mapping matrix singular after {attempts} jitters");
                    singular += 1;
                    continue;
                }
                Err(Error::NumericDomain { op, detail }) => {
                    log::error!("epoch {epoch}: {op}: {detail}");
                    return Err(non_finite(run));
                }
                Err(e) => return Err(e),
            };
            singular += jittered as usize;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(non_finite(run));
            }
            batch_loss += loss;
            used += 1;
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.iter_mut().zip(g).for_each(|(a, g)| *a += g)),
            }
        }
        let Some(acc) = acc else { continue };
        let scale = 1.0 / used as f64;
        for (p, g) in run.model.params_mut().into_iter().zip(acc) {
            p.grad = Some(g.into_iter().map(|v| v * scale).collect());
        }
        adam.step(run.model.params_mut())?;
        run.state.step += 1;
        loss_sum += batch_loss;
        loss_n += used;
    }

    let val_mean = (!val.is_empty()).then(|| mean_error(&run.model, val));
    if let Some(v) = val_mean {
        if run.state.best_val_mean_deg.map_or(true, |b| v < b) {
            run.state.best_val_mean_deg = Some(v);
            run.state.best_epoch = Some(epoch);
            run.best = Some(run.model.frozen());
        }
    }
    let train_loss_deg = if loss_n > 0 { (loss_sum / loss_n as f64).to_degrees() } else { f64::NAN };
    run.state.singular_events += singular;
    run.state.lr = adam.lr;
    run.state.epoch += 1;
    log::info!(
        "epoch {epoch}: lr {:.3e} train {train_loss_deg:.3}° val {}",
        adam.lr,
        val_mean.map_or_else(|| "-".into(), |v| format!("{v:.3}°"))
    );
    run.log.push(LogRow {
        epoch,
        step: run.state.step,
        lr: adam.lr,
        train_loss_deg,
        val_mean_deg: val_mean,
        singular_events: singular,
    });
    Ok(())
}
