use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use siie::baselines::{BaselineConfig, BaselineMethod};
use siie::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use siie::config::RunConfig;
use siie::dataio::synth::ImageFormat;
use siie::dataio::{load_image_path, load_manifest, plan_excluding, DatasetManifest, SynthConfig};
use siie::harness::{
    cameras_of, evaluate, run_campaign, select_cameras, summarize, train_on_manifest,
    BaselineEstimator, Campaign, EvalReport, GroundTruthOracle, ModelEstimator, Protocol,
};
use siie::metrics::Metric;
use siie::tensor::invert3;
use siie::training::write_log_csv;

/// Camera-independent illuminant estimation.
///
/// Set RAYON_NUM_THREADS=1 for single-threaded runs.
#[derive(Parser)]
#[command(name = "siie", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every camera of a manifest except the excluded ones.
    Train(TrainArgs),
    /// Evaluate a model, or run a train+evaluate campaign.
    Eval(EvalArgs),
    /// Estimate the illuminant of one image.
    Predict(PredictArgs),
    /// Evaluate a classical estimator.
    Baseline(BaselineArgs),
    /// Generate a synthetic multi-sensor dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',')]
    exclude_cameras: Vec<String>,
    /// JSON file with `train`, `network` and `histogram` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `train.seed` of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CampaignKind {
    /// Leave one camera out, for every camera.
    Loco,
    /// Train on all cameras not in --cameras, test on --cameras.
    Cross,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with_all = ["oracle", "campaign"], required_unless_present_any = ["oracle", "campaign"])]
    model: Option<PathBuf>,
    /// Use each image's ground truth as the prediction.
    #[arg(long)]
    oracle: bool,
    /// Cameras to evaluate (all if omitted); the test cameras for `--campaign cross`.
    #[arg(long, value_delimiter = ',')]
    cameras: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "recovery,reproduction")]
    metrics: Vec<String>,
    #[arg(long, value_enum)]
    campaign: Option<CampaignKind>,
    /// Training config for campaigns.
    #[arg(long, requires = "campaign")]
    config: Option<PathBuf>,
    #[arg(long, requires = "campaign")]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Also print the working-space illuminant and the 3×3 mapping matrix.
    #[arg(long)]
    dump_working_space: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    method: String,
    #[arg(long)]
    manifest: PathBuf,
    /// Minkowski exponent.
    #[arg(long)]
    p: Option<f64>,
    /// Gray-Edge smoothing in pixels.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    cameras: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "recovery,reproduction")]
    metrics: Vec<String>,
    /// Write per-image and stats CSVs here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scenes: usize,
    #[arg(long)]
    sensors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 150)]
    size: usize,
    #[arg(long, value_enum, default_value = "rawf")]
    format: Format,
    /// Make every scene's mean reflectance achromatic.
    #[arg(long)]
    gray_balanced: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Rawf,
    Png16,
}

/// Marks a failure after inputs were accepted (exit code 3).
#[derive(Debug)]
struct Abort(anyhow::Error);

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Abort {}

trait AbortExt<T> {
    fn or_abort(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> AbortExt<T> for std::result::Result<T, E> {
    fn or_abort(self) -> Result<T> {
        self.map_err(|e| Abort(e.into()).into())
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Abort>().is_some() {
        return 3;
    }
    match err.downcast_ref::<siie::Error>() {
        Some(
            siie::Error::NonFiniteLoss { .. } | siie::Error::SingularMatrix { .. } | siie::Error::NumericDomain { .. },
        ) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// `x` with 6 significant digits.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn read_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn parse_metrics(names: &[String]) -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    for n in names {
        let m = Metric::parse(n.trim())?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("no metrics given");
    }
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let cfg = read_config(a.config.as_deref(), a.seed)?;
    let plan = plan_excluding(&manifest, &a.exclude_cameras)?;
    if plan.train_ids.is_empty() {
        bail!("no training images left after excluding {:?}", a.exclude_cameras);
    }
    let trained = train_on_manifest(&manifest, &plan.train_ids, &cfg)?;

    create_dir(&a.out).or_abort()?;
    let ckpt = Checkpoint::from_run(&trained.run, &cfg.train);
    save_checkpoint(&ckpt, &a.out.join("model.siie")).or_abort()?;
    let log = File::create(a.out.join("train_log.csv")).or_abort()?;
    write_log_csv(&trained.run.log, BufWriter::new(log)).or_abort()?;
    let snapshot = json!({
        "config": cfg,
        "manifest": a.manifest,
        "excluded_cameras": a.exclude_cameras,
        "train_cameras": cameras_of(&manifest, &plan.train_ids),
        "train_images": trained.train_images,
        "validation_images": trained.validation_images,
    });
    fs::write(a.out.join("resolved_config.json"), serde_json::to_vec_pretty(&snapshot)?).or_abort()?;

    let st = &trained.run.state;
    println!(
        "trained {} epochs ({} steps); best validation mean {} deg at epoch {}",
        st.epoch,
        st.step,
        st.best_val_mean_deg.map_or("-".into(), sig6),
        st.best_epoch.map_or("-".into(), |e| e.to_string()),
    );
    Ok(())
}

fn print_stats(report: &EvalReport) {
    println!("{}", report.model_id);
    println!("{:<16} {:<13} {:>6} {:>10} {:>10} {:>10} {:>10}", "camera", "metric", "n", "mean", "median", "best25", "worst25");
    for r in &report.stats {
        println!(
            "{:<16} {:<13} {:>6} {:>10} {:>10} {:>10} {:>10}",
            r.camera_id,
            r.metric_name,
            r.n,
            sig6(r.mean),
            sig6(r.median),
            sig6(r.best25),
            sig6(r.worst25)
        );
    }
    if !report.failures.is_empty() {
        println!("{} image(s) failed; see failures.csv", report.failures.len());
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let metrics = parse_metrics(&a.metrics)?;
    if let Some(kind) = a.campaign {
        let cfg = read_config(a.config.as_deref(), a.seed)?;
        let campaign = match kind {
            CampaignKind::Loco => {
                if !a.cameras.is_empty() {
                    bail!("--cameras is not used by the loco campaign");
                }
                Campaign::LeaveOneCameraOut
            }
            CampaignKind::Cross => Campaign::Cross {
                test_cameras: a.cameras.clone(),
            },
        };
        campaign.plans(&manifest)?;
        create_dir(&a.out)?;
        let folds = run_campaign(&manifest, &campaign, &cfg, &metrics, Some(&a.out))?;
        let summary = summarize(&folds);
        println!("{:<16} {:<11} {:<13} {:>6} {:>10} {:>10}", "held_out", "method", "metric", "n", "mean", "median");
        for r in &summary {
            println!(
                "{:<16} {:<11} {:<13} {:>6} {:>10} {:>10}",
                r.camera_id,
                r.method,
                r.metric_name,
                r.n,
                sig6(r.mean),
                sig6(r.median)
            );
        }
        return Ok(());
    }

    let ids = select_cameras(&manifest, &a.cameras)?;
    let report = if a.oracle {
        evaluate(&GroundTruthOracle, &manifest, &ids, &metrics, Protocol::FixedSplit)?
    } else {
        let path = a.model.as_deref().expect("clap requires --model");
        let ckpt = load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))?;
        let est = ModelEstimator {
            model: ckpt.final_model(),
            id: path.display().to_string(),
        };
        evaluate(&est, &manifest, &ids, &metrics, Protocol::FixedSplit)?
    };
    report.write(&a.out, "").or_abort()?;
    print_stats(&report);
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let model = ckpt.final_model();
    let image = load_image_path(&a.image, model.config.network.image_size)
        .with_context(|| format!("reading image {}", a.image.display()))?;
    let out = model.forward(&image)?;
    let line = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    println!("{}", line(&out.l));
    if a.dump_working_space {
        // the matrix that was actually inverted, so that M⁻¹ℓ̂_m reproduces ℓ
        let m = if out.mapping.jittered {
            invert3(&out.mapping.m_inv).map(|(inv, _)| inv).unwrap_or(out.mapping.m)
        } else {
            out.mapping.m
        };
        println!("{}", line(&out.l_m));
        println!("{}", line(&m));
    }
    Ok(())
}

fn cmd_baseline(a: BaselineArgs) -> Result<()> {
    let method = BaselineMethod::parse(&a.method)?;
    let mut cfg = BaselineConfig::new(method);
    if let Some(p) = a.p {
        cfg.minkowski_p = p;
    }
    if let Some(s) = a.sigma {
        cfg.smoothing_sigma = s;
    }
    cfg.validate()?;
    let metrics = parse_metrics(&a.metrics)?;
    let manifest = read_manifest(&a.manifest)?;
    let ids = select_cameras(&manifest, &a.cameras)?;
    let report = evaluate(&BaselineEstimator(cfg), &manifest, &ids, &metrics, Protocol::FixedSplit)?;
    if let Some(out) = &a.out {
        report.write(out, "").or_abort()?;
    }
    print_stats(&report);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.scenes == 0 {
        bail!("--scenes must be at least 1");
    }
    if a.sensors < 2 {
        bail!("--sensors must be at least 2");
    }
    if a.size == 0 {
        bail!("--size must be positive");
    }
    let cfg = SynthConfig {
        size: a.size,
        format: match a.format {
            Format::Rawf => ImageFormat::Rawf,
            Format::Png16 => ImageFormat::Png16,
        },
        gray_balanced: a.gray_balanced,
        ..SynthConfig::new(a.scenes, a.sensors, a.seed)
    };
    let manifest = siie::dataio::synth_generate(cfg, &a.out).or_abort()?;
    println!(
        "wrote {} images from {} cameras to {}",
        manifest.entries.len(),
        manifest.cameras().len(),
        a.out.join("manifest.csv").display()
    );
    Ok(())
}
