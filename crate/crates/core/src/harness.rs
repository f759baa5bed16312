//! Evaluation reports, estimator adapters and train/evaluate campaigns.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{estimate_baseline, BaselineConfig, BaselineMethod};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::dataio::{
    load_image, load_image_sized, make_folds, plan_excluding, DatasetManifest, FoldPlan, ManifestEntry, RawImage,
    Sample,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, Metric, StatsRow};
use crate::networks::Model;
use crate::training::{split_validation, train, write_log_csv, TrainRun};

/// Label under which stats over every camera are reported.
pub const ALL_CAMERAS: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    LeaveOneCameraOut,
    CrossDataset,
    FixedSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub illuminant: [f64; 3],
    pub jittered: bool,
}

/// Anything that maps an image to an illuminant estimate.
pub trait Estimator: Sync {
    fn id(&self) -> String;

    /// Side length the estimator needs its input images at; `None` takes
    /// the standard thumbnail (or the native size of smaller images).
    fn image_size(&self) -> Option<usize> {
        None
    }

    fn estimate(&self, image: &RawImage) -> Result<Prediction>;
}

pub struct ModelEstimator<'a> {
    pub model: &'a Model,
    pub id: String,
}

impl Estimator for ModelEstimator<'_> {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn image_size(&self) -> Option<usize> {
        Some(self.model.config.network.image_size)
    }

    fn estimate(&self, image: &RawImage) -> Result<Prediction> {
        let out = self.model.forward(image)?;
        Ok(Prediction {
            illuminant: out.l,
            jittered: out.mapping.jittered,
        })
    }
}

pub struct BaselineEstimator(pub BaselineConfig);

impl Estimator for BaselineEstimator {
    fn id(&self) -> String {
        let c = &self.0;
        match c.method {
            BaselineMethod::ShadesOfGray => format!("{}(p={})", c.method.name(), c.minkowski_p),
            BaselineMethod::GrayEdge1 | BaselineMethod::GrayEdge2 => {
                format!("{}(p={},sigma={})", c.method.name(), c.minkowski_p, c.smoothing_sigma)
            }
            _ => c.method.name().to_owned(),
        }
    }

    fn estimate(&self, image: &RawImage) -> Result<Prediction> {
        Ok(Prediction {
            illuminant: estimate_baseline(image, &self.0)?,
            jittered: false,
        })
    }
}

/// Returns each image's ground truth; every error is zero.
pub struct GroundTruthOracle;

impl Estimator for GroundTruthOracle {
    fn id(&self) -> String {
        "ground_truth".into()
    }

    fn estimate(&self, image: &RawImage) -> Result<Prediction> {
        Ok(Prediction {
            illuminant: image.gt_illuminant,
            jittered: false,
        })
    }
}

/// One evaluated image. `reproduction_err_deg` is empty when that metric
/// was not requested or is undefined for the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageRow {
    pub image_path: String,
    pub camera_id: String,
    pub est_r: f64,
    pub est_g: f64,
    pub est_b: f64,
    pub gt_r: f64,
    pub gt_g: f64,
    pub gt_b: f64,
    pub recovery_err_deg: Option<f64>,
    pub reproduction_err_deg: Option<f64>,
    pub jittered: bool,
}

impl PerImageRow {
    fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Recovery => self.recovery_err_deg,
            Metric::Reproduction => self.reproduction_err_deg,
        }
    }
}

/// An image the estimator could not handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub image_path: String,
    pub camera_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub protocol: Protocol,
    pub metrics: Vec<Metric>,
    pub per_image: Vec<PerImageRow>,
    pub failures: Vec<Failure>,
    /// Per camera (sorted) then [`ALL_CAMERAS`]; metrics in request order.
    pub stats: Vec<StatsRow>,
}

impl EvalReport {
    pub fn stats_for(&self, camera: &str, metric: Metric) -> Option<&StatsRow> {
        self.stats
            .iter()
            .find(|r| r.camera_id == camera && r.metric_name == metric.name())
    }

    /// Write `{prefix}per_image.csv`, `{prefix}stats.csv` and `{prefix}failures.csv`.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(format!("{prefix}per_image.csv")), |w| {
            write_per_image_csv(&self.per_image, w)
        })?;
        write_file(&dir.join(format!("{prefix}stats.csv")), |w| {
            crate::metrics::write_stats_csv(&self.stats, w)
        })?;
        write_file(&dir.join(format!("{prefix}failures.csv")), |w| {
            let mut c = csv::WriterBuilder::new().has_headers(false).from_writer(w);
            c.write_record(["image_path", "camera_id", "error"])?;
            for f in &self.failures {
                c.serialize(f)?;
            }
            c.flush().map_err(|e| Error::io("<failures csv>", e))
        })
    }
}

pub(crate) fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_per_image_csv(rows: &[PerImageRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "image_path",
        "camera_id",
        "est_r",
        "est_g",
        "est_b",
        "gt_r",
        "gt_g",
        "gt_b",
        "recovery_err_deg",
        "reproduction_err_deg",
        "jittered",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<per-image csv>", e))
}

pub fn read_per_image_csv(input: impl Read) -> Result<Vec<PerImageRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Stats rows for `metrics` over `rows`: each camera in sorted order, then
/// all cameras together. Rows lacking a metric value are left out of that
/// metric's stats.
pub fn derive_stats(rows: &[PerImageRow], metrics: &[Metric]) -> Result<Vec<StatsRow>> {
    let mut by_camera: BTreeMap<&str, Vec<&PerImageRow>> = BTreeMap::new();
    for r in rows {
        by_camera.entry(r.camera_id.as_str()).or_default().push(r);
    }
    let all: Vec<&PerImageRow> = rows.iter().collect();
    let groups = by_camera.into_iter().chain(std::iter::once((ALL_CAMERAS, all)));
    let mut out = Vec::new();
    for (camera, members) in groups {
        for &m in metrics {
            let values: Vec<f64> = members.iter().filter_map(|r| r.value(m)).collect();
            if !values.is_empty() {
                out.push(StatsRow::new(camera, &aggregate(&values)?, m));
            }
        }
    }
    Ok(out)
}

/// Assemble a report from per-entry predictions.
pub fn build_report(
    model_id: impl Into<String>,
    protocol: Protocol,
    metrics: &[Metric],
    predictions: Vec<(&ManifestEntry, Result<Prediction>)>,
) -> Result<EvalReport> {
    if metrics.is_empty() {
        return Err(Error::InvalidArgument("no metrics requested".into()));
    }
    let mut per_image = Vec::new();
    let mut failures = Vec::new();
    for (entry, pred) in predictions {
        let fail = |e: Error| Failure {
            image_path: entry.image_path.clone(),
            camera_id: entry.camera_id.clone(),
            error: e.to_string(),
        };
        let p = match pred {
            Ok(p) => p,
            Err(e) => {
                failures.push(fail(e));
                continue;
            }
        };
        let gt = entry.gt;
        let est = p.illuminant;
        let want = |m| metrics.contains(&m);
        let recovery = if want(Metric::Recovery) {
            match Metric::Recovery.compute(gt, est) {
                Ok(v) => Some(v),
                Err(e) => {
                    failures.push(fail(e));
                    continue;
                }
            }
        } else {
            None
        };
        let reproduction = want(Metric::Reproduction)
            .then(|| Metric::Reproduction.compute(gt, est).ok())
            .flatten();
        per_image.push(PerImageRow {
            image_path: entry.image_path.clone(),
            camera_id: entry.camera_id.clone(),
            est_r: est[0],
            est_g: est[1],
            est_b: est[2],
            gt_r: gt[0],
            gt_g: gt[1],
            gt_b: gt[2],
            recovery_err_deg: recovery,
            reproduction_err_deg: reproduction,
            jittered: p.jittered,
        });
    }
    let stats = derive_stats(&per_image, metrics)?;
    Ok(EvalReport {
        model_id: model_id.into(),
        protocol,
        metrics: metrics.to_vec(),
        per_image,
        failures,
        stats,
    })
}

/// Run `estimator` on entries `ids` of `manifest`. Unreadable images abort;
/// estimation failures are recorded in the report.
pub fn evaluate(
    estimator: &dyn Estimator,
    manifest: &DatasetManifest,
    ids: &[usize],
    metrics: &[Metric],
    protocol: Protocol,
) -> Result<EvalReport> {
    let size = estimator.image_size();
    let preds: Vec<Result<Result<Prediction>>> = ids
        .par_iter()
        .map(|&i| {
            let entry = &manifest.entries[i];
            let image = match size {
                Some(s) => load_image_sized(manifest, entry, s)?,
                None => load_image(manifest, entry)?,
            };
            Ok(estimator.estimate(&image))
        })
        .collect();
    let mut items = Vec::with_capacity(ids.len());
    for (&i, p) in ids.iter().zip(preds) {
        items.push((&manifest.entries[i], p?));
    }
    build_report(estimator.id(), protocol, metrics, items)
}

/// Entries whose camera is in `cameras`, or every entry if `cameras` is empty.
pub fn select_cameras(manifest: &DatasetManifest, cameras: &[String]) -> Result<Vec<usize>> {
    let known = manifest.cameras();
    if let Some(c) = cameras.iter().find(|c| !known.contains(c)) {
        return Err(Error::InvalidInput(format!("camera `{c}` is not in the manifest")));
    }
    Ok((0..manifest.entries.len())
        .filter(|&i| cameras.is_empty() || cameras.contains(&manifest.entries[i].camera_id))
        .collect())
}

/// A finished training run and the images it used.
pub struct Trained {
    pub run: TrainRun,
    pub train_images: Vec<String>,
    pub validation_images: Vec<String>,
}

/// Train a fresh model (seeded by `cfg.train.seed`) on the given samples.
pub fn train_samples(samples: Vec<Sample>, cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let seed = cfg.train.seed;
    let (tr, va) = split_validation(samples, cfg.train.validation_fraction, seed);
    let model = Model::new(cfg.model(), seed)?;
    let run = train(model, &tr, &va, &cfg.train)?;
    Ok(Trained {
        run,
        train_images: tr.into_iter().map(|s| s.id).collect(),
        validation_images: va.into_iter().map(|s| s.id).collect(),
    })
}

/// Load entries `ids` at the model's input size and train on them.
pub fn train_on_manifest(manifest: &DatasetManifest, ids: &[usize], cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    let samples = crate::dataio::load_samples(manifest, ids, cfg.network.image_size)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    train_samples(samples, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Campaign {
    /// One fold per camera.
    LeaveOneCameraOut,
    /// A single fold testing on the listed cameras.
    Cross { test_cameras: Vec<String> },
}

impl Campaign {
    pub fn protocol(&self) -> Protocol {
        match self {
            Campaign::LeaveOneCameraOut => Protocol::LeaveOneCameraOut,
            Campaign::Cross { .. } => Protocol::CrossDataset,
        }
    }

    pub fn plans(&self, manifest: &DatasetManifest) -> Result<Vec<FoldPlan>> {
        match self {
            Campaign::LeaveOneCameraOut => make_folds(manifest),
            Campaign::Cross { test_cameras } => {
                if test_cameras.is_empty() {
                    return Err(Error::InvalidArgument("cross campaign needs test cameras".into()));
                }
                let plan = plan_excluding(manifest, test_cameras)?;
                if plan.train_ids.is_empty() {
                    return Err(Error::InvalidInput("cross campaign leaves no training images".into()));
                }
                Ok(vec![plan])
            }
        }
    }
}

pub struct FoldResult {
    pub plan: FoldPlan,
    pub model: EvalReport,
    /// Gray-World on the same test images.
    pub baseline: EvalReport,
    pub run: TrainRun,
}

pub const SUMMARY_HEADER: &str = "camera_id,method,n,mean,median,best25,worst25,metric_name";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Held-out camera(s) of the fold.
    pub camera_id: String,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub best25: f64,
    pub worst25: f64,
    pub metric_name: String,
}

/// One row per fold, method and metric, from each report's all-camera
/// stats, ordered by held-out camera.
pub fn summarize(folds: &[FoldResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for f in folds {
        for (method, report) in [("model", &f.model), ("gray_world", &f.baseline)] {
            for s in report.stats.iter().filter(|s| s.camera_id == ALL_CAMERAS) {
                rows.push(SummaryRow {
                    camera_id: f.plan.label(),
                    method: method.into(),
                    n: s.n,
                    mean: s.mean,
                    median: s.median,
                    best25: s.best25,
                    worst25: s.worst25,
                    metric_name: s.metric_name.clone(),
                });
            }
        }
    }
    // stable: keeps method and metric order within a fold
    rows.sort_by(|a, b| a.camera_id.cmp(&b.camera_id));
    rows
}

pub fn write_summary_csv(rows: &[SummaryRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))
}

/// Train and evaluate one model per fold, with Gray-World on the same test
/// images. Images are loaded once. With `out`, each fold writes its
/// checkpoint, log and reports to `out/<held-out cameras>/` and the summary
/// goes to `out/summary.csv`.
pub fn run_campaign(
    manifest: &DatasetManifest,
    campaign: &Campaign,
    cfg: &RunConfig,
    metrics: &[Metric],
    out: Option<&Path>,
) -> Result<Vec<FoldResult>> {
    cfg.validate()?;
    if metrics.is_empty() {
        return Err(Error::InvalidArgument("no metrics requested".into()));
    }
    let plans = campaign.plans(manifest)?;
    let size = cfg.network.image_size;
    let gw = BaselineConfig::new(BaselineMethod::GrayWorld);
    log::info!("loading {} images", manifest.entries.len());
    let loaded: Vec<(Sample, Result<[f64; 3]>)> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let image = load_image_sized(manifest, e, size)?;
            Ok((Sample::from_image(&image)?, estimate_baseline(&image, &gw)))
        })
        .collect::<Result<_>>()?;

    let mut folds = Vec::new();
    for plan in plans {
        let label = plan.label();
        log::info!(
            "fold {label}: {} training, {} test images",
            plan.train_ids.len(),
            plan.test_ids.len()
        );
        let samples = plan.train_ids.iter().map(|&i| loaded[i].0.clone()).collect();
        let trained = train_samples(samples, cfg)?;
        let model = trained.run.final_model();
        let preds: Vec<Result<Prediction>> = plan
            .test_ids
            .par_iter()
            .map(|&i| {
                let s = &loaded[i].0;
                model.forward_pixels(&s.pixels, &s.id).map(|o| Prediction {
                    illuminant: o.l,
                    jittered: o.mapping.jittered,
                })
            })
            .collect();
        let entries = plan.test_ids.iter().map(|&i| &manifest.entries[i]);
        let model_report = build_report(
            format!("model_{label}"),
            campaign.protocol(),
            metrics,
            entries.clone().zip(preds).collect(),
        )?;
        let base_preds = plan.test_ids.iter().map(|&i| match &loaded[i].1 {
            Ok(l) => Ok(Prediction {
                illuminant: *l,
                jittered: false,
            }),
            Err(e) => Err(Error::InvalidInput(e.to_string())),
        });
        let baseline = build_report("gray_world", campaign.protocol(), metrics, entries.zip(base_preds).collect())?;
        if let Some(dir) = out {
            let fold_dir = dir.join(&label);
            model_report.write(&fold_dir, "")?;
            baseline.write(&fold_dir, "baseline_")?;
            save_checkpoint(&Checkpoint::from_run(&trained.run, &cfg.train), &fold_dir.join("model.siie"))?;
            write_file(&fold_dir.join("train_log.csv"), |w| write_log_csv(&trained.run.log, w))?;
        }
        folds.push(FoldResult {
            plan,
            model: model_report,
            baseline,
            run: trained.run,
        });
    }
    if let Some(dir) = out {
        write_file(&dir.join("summary.csv"), |w| write_summary_csv(&summarize(&folds), w))?;
    }
    Ok(folds)
}

/// Camera sets of a manifest subset, used for run snapshots.
pub fn cameras_of(manifest: &DatasetManifest, ids: &[usize]) -> Vec<String> {
    let mut c: Vec<String> = ids.iter().map(|&i| manifest.entries[i].camera_id.clone()).collect();
    c.sort();
    c.dedup();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_generate, SynthConfig};
    use crate::histogram::HistogramConfig;
    use crate::metrics::{read_stats_csv, write_stats_csv};
    use crate::networks::NetworkConfig;

    fn synth(dir: &Path, scenes: usize, sensors: usize) -> DatasetManifest {
        synth_generate(
            SynthConfig {
                size: 16,
                ..SynthConfig::new(scenes, sensors, 5)
            },
            dir,
        )
        .unwrap()
    }

    fn tiny_config() -> RunConfig {
        let mut network = NetworkConfig::with_channels([2, 3, 3]);
        network.image_size = 16;
        RunConfig {
            network,
            histogram: HistogramConfig { bins: 9, ..Default::default() },
            train: crate::training::TrainConfig {
                lr: 1e-3,
                max_epochs: 2,
                validation_fraction: 0.25,
                ..Default::default()
            },
        }
    }

    fn entry(cam: &str, path: &str, gt: [f64; 3]) -> ManifestEntry {
        ManifestEntry {
            image_path: path.into(),
            camera_id: cam.into(),
            gt,
            mask_path: None,
        }
    }

    #[test]
    fn oracle_has_zero_error_and_stats_rederive_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth(dir.path(), 6, 3);
        let ids = select_cameras(&m, &[]).unwrap();
        let metrics = [Metric::Recovery, Metric::Reproduction];
        let rep = evaluate(&GroundTruthOracle, &m, &ids, &metrics, Protocol::FixedSplit).unwrap();
        assert_eq!(rep.per_image.len(), 18);
        for r in &rep.per_image {
            assert!(r.recovery_err_deg.unwrap().abs() < 1e-6);
            assert!(r.reproduction_err_deg.unwrap().abs() < 1e-6);
        }
        // 3 cameras + all, 2 metrics each
        assert_eq!(rep.stats.len(), 8);
        assert_eq!(rep.stats_for(ALL_CAMERAS, Metric::Recovery).unwrap().n, 18);

        let gw = evaluate(
            &BaselineEstimator(BaselineConfig::new(BaselineMethod::GrayWorld)),
            &m,
            &ids,
            &metrics,
            Protocol::FixedSplit,
        )
        .unwrap();
        let out = dir.path().join("eval");
        gw.write(&out, "").unwrap();
        let rows = read_per_image_csv(File::open(out.join("per_image.csv")).unwrap()).unwrap();
        assert_eq!(rows, gw.per_image);
        let stored = read_stats_csv(File::open(out.join("stats.csv")).unwrap()).unwrap();
        assert_eq!(derive_stats(&rows, &metrics).unwrap(), stored);
    }

    #[test]
    fn failures_are_listed_not_aggregated() {
        let e1 = entry("a", "x.rawf", [0.0, 1.0, 0.0]);
        let e2 = entry("a", "y.rawf", [0.0, 1.0, 0.0]);
        let rep = build_report(
            "t",
            Protocol::FixedSplit,
            &[Metric::Recovery, Metric::Reproduction],
            vec![
                (&e1, Ok(Prediction { illuminant: [0.0, 1.0, 0.0], jittered: false })),
                (&e2, Err(Error::InvalidInput("boom".into()))),
            ],
        )
        .unwrap();
        assert_eq!(rep.per_image.len(), 1);
        assert_eq!(rep.failures.len(), 1);
        assert!(rep.failures[0].error.contains("boom"));
        // zero components leave the reproduction error undefined
        assert_eq!(rep.per_image[0].reproduction_err_deg, None);
        assert!(rep.stats_for("a", Metric::Reproduction).is_none());
        assert_eq!(rep.stats_for("a", Metric::Recovery).unwrap().n, 1);

        let mut buf = Vec::new();
        write_stats_csv(&rep.stats, &mut buf).unwrap();
        let mut csv = Vec::new();
        write_per_image_csv(&rep.per_image, &mut csv).unwrap();
        let back = read_per_image_csv(&csv[..]).unwrap();
        assert_eq!(back, rep.per_image);
    }

    #[test]
    fn select_cameras_rejects_unknown() {
        let m = DatasetManifest {
            root: Default::default(),
            entries: vec![entry("a", "1", [1.0, 0.0, 0.0]), entry("b", "2", [1.0, 0.0, 0.0])],
        };
        assert_eq!(select_cameras(&m, &["b".into()]).unwrap(), vec![1]);
        assert!(select_cameras(&m, &["c".into()]).is_err());
    }

    #[test]
    fn loco_campaign_runs_one_fold_per_camera() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth(&dir.path().join("data"), 4, 3);
        let out = dir.path().join("campaign");
        let folds = run_campaign(&m, &Campaign::LeaveOneCameraOut, &tiny_config(), &[Metric::Recovery], Some(&out)).unwrap();
        assert_eq!(folds.len(), 3);
        for (f, cam) in folds.iter().zip(["synth_0", "synth_1", "synth_2"]) {
            assert_eq!(f.plan.test_cameras, vec![cam.to_string()]);
            assert!(f.model.per_image.iter().chain(&f.baseline.per_image).all(|r| r.camera_id == cam));
            assert_eq!(f.model.per_image.len() + f.model.failures.len(), 4);
            assert_eq!(f.baseline.per_image.len(), 4);
            assert!(out.join(cam).join("model.siie").exists());
            assert!(out.join(cam).join("baseline_stats.csv").exists());
        }
        let summary = summarize(&folds);
        let cams: Vec<&str> = summary.iter().map(|r| r.camera_id.as_str()).collect();
        let mut sorted = cams.clone();
        sorted.sort();
        assert_eq!(cams, sorted);
        assert_eq!(summary.iter().filter(|r| r.method == "gray_world").count(), 3);
        let text = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(text.starts_with(SUMMARY_HEADER));
        assert_eq!(text.lines().count(), 1 + summary.len());
    }

    #[test]
    fn cross_campaign_is_single_fold() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth(dir.path(), 3, 3);
        let c = Campaign::Cross {
            test_cameras: vec!["synth_2".into()],
        };
        let plans = c.plans(&m).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].train_ids.len(), 6);
        assert!(Campaign::Cross { test_cameras: vec![] }.plans(&m).is_err());
    }
}
