//! Command-line front end. The `mmms` binary only parses arguments and maps
//! [`CliError::exit_code`] to the process status.

use std::io::{BufReader, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmms_nn::backbone::save_archive;
use mmms_nn::{FeatureProvider, StubBackbone};

use crate::dataset::{write_synthetic, Dataset, DatasetError, OverlapMode, SynthConfig};
use crate::eval::{evaluate_dataset, EvalConfig, EvalError, HarnessOptions, Protocol};
use crate::predictor::remote::{run_echo_child, EchoExit, EchoFault};
use crate::predictor::{BuildContext, NeuralPredictor, PredictorError, PredictorSpec};
use crate::report::{EvalReport, ReportError};
use crate::service::{self, AppState, ServiceOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),
    #[error("predictor error: {0}")]
    Predictor(String),
    #[error("{failed} of {total} images failed; see the report's errors")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Dataset(_) => 3,
            Self::Predictor(_) | Self::PartialFailure { .. } => 4,
        }
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Spec(m) => Self::Config(m),
            other => Self::Predictor(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => Self::Config(m),
            EvalError::Dataset(d) => Self::Dataset(d),
            EvalError::NoSurfaces { .. } | EvalError::EmptySurface { .. } | EvalError::EmptyResults | EvalError::Mask(_) => {
                Self::Dataset(DatasetError::Synth(e.to_string()))
            }
            other => Self::Predictor(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        // the only report failure reachable here is an unusable --out path
        Self::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mmms", version, about = "Multi-surface interactive segmentation benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// NoC evaluation: each surface annotated independently from scratch.
    EvalSingle(EvalSingleArgs),
    /// NoCMS/FRMS evaluation with joint-mask conflicts and revisits.
    EvalMulti(EvalMultiArgs),
    /// Run a stub backbone over a dataset and write one feature archive per image.
    ExtractFeatures(ExtractArgs),
    /// Write a seeded synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Host the annotation HTTP service.
    Serve(ServeArgs),
    /// Reference wire-protocol child used by tests.
    #[command(hide = true)]
    EchoPredictor(EchoArgs),
}

#[derive(Debug, Args)]
pub struct CommonEval {
    #[arg(long)]
    pub dataset: PathBuf,
    /// oracle:gt | oracle:FILE | classical | neural[:seed=N,size=S,features=DIR] | remote:CMD
    #[arg(long, default_value = "classical")]
    pub predictor: String,
    #[arg(long, default_value_t = crate::eval::DEFAULT_MAX_CLICKS)]
    pub max_clicks: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_DISK_RADIUS)]
    pub disk_radius: u32,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Overrides the neural predictor's initialisation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra NoC thresholds, comma separated, each at most --theta-iou.
    #[arg(long, value_delimiter = ',')]
    pub noc_at: Vec<f64>,
    /// Per-message timeout for remote predictors, milliseconds.
    #[arg(long, default_value_t = 10_000)]
    pub remote_timeout_ms: u64,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalSingleArgs {
    #[command(flatten)]
    pub common: CommonEval,
    #[arg(long, default_value_t = 90.0)]
    pub theta_iou: f64,
}

#[derive(Debug, Args)]
pub struct EvalMultiArgs {
    #[command(flatten)]
    pub common: CommonEval,
    #[arg(long, default_value_t = 80.0)]
    pub theta_iou: f64,
    #[arg(long, default_value_t = 70.0)]
    pub theta_avg: f64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Feature provider; only `stub:SEED` is built in.
    #[arg(long, default_value = "stub:0")]
    pub backbone: String,
    /// Working resolution (square); defaults to the neural predictor's.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub surfaces: u16,
    #[arg(long, default_value = "adjacent")]
    pub overlap: OverlapMode,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    /// Uniform per-pixel noise amplitude, 8-bit steps.
    #[arg(long, default_value_t = crate::dataset::synth::DEFAULT_NOISE)]
    pub noise: u8,
    /// Minimum colour distance between surfaces.
    #[arg(long, default_value_t = crate::dataset::synth::DEFAULT_MIN_CONTRAST)]
    pub min_contrast: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "classical")]
    pub predictor: String,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 80.0)]
    pub theta_iou: f64,
    #[arg(long, default_value_t = 70.0)]
    pub theta_avg: f64,
    #[arg(long, default_value_t = crate::eval::DEFAULT_MAX_CLICKS)]
    pub max_clicks: usize,
    /// Idle session lifetime, seconds.
    #[arg(long, default_value_t = 1800)]
    pub idle_timeout: u64,
    /// Directory with the built annotation UI.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    None,
    Malformed,
    Hang,
    Crash,
    CrashOnce,
    Error,
}

#[derive(Debug, Args)]
pub struct EchoArgs {
    #[arg(long, value_enum, default_value = "none")]
    pub fault: FaultArg,
    /// Marker file for `crash-once`.
    #[arg(long)]
    pub marker: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::EvalSingle(a) => {
            let cfg = EvalConfig::single(a.theta_iou, a.common.max_clicks)?;
            eval(&a.common, Protocol::Single, cfg)
        }
        Command::EvalMulti(a) => {
            let cfg = EvalConfig::new(a.theta_iou, a.theta_avg, a.common.max_clicks)?;
            eval(&a.common, Protocol::Multi, cfg)
        }
        Command::ExtractFeatures(a) => extract_features(&a),
        Command::GenSynth(a) => gen_synth(&a),
        Command::Serve(a) => serve(a),
        Command::EchoPredictor(a) => echo(&a),
    }
}

fn parse_spec(text: &str, seed: Option<u64>) -> Result<PredictorSpec, CliError> {
    let mut spec: PredictorSpec = text.parse()?;
    if let (PredictorSpec::Neural { seed: s, .. }, Some(seed)) = (&mut spec, seed) {
        *s = seed;
    }
    Ok(spec)
}

/// Dimensions of the dataset's first image, announced to remote children.
fn first_resolution(ds: &Dataset) -> Result<[usize; 2], CliError> {
    let id = ds.ids().first().ok_or_else(|| CliError::Config("dataset lists no images".into()))?;
    let s = ds.load_sample(id)?;
    Ok([s.height(), s.width()])
}

fn eval(common: &CommonEval, protocol: Protocol, mut cfg: EvalConfig) -> Result<(), CliError> {
    cfg.disk_radius = common.disk_radius;
    cfg.validate()?;
    if common.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let spec = parse_spec(&common.predictor, common.seed)?;
    let dataset = Dataset::open(&common.dataset)?;
    let resolution = first_resolution(&dataset)?;
    let ctx = BuildContext {
        manifest: dataset.manifest(),
        resolution,
        disk_radius: cfg.disk_radius,
        remote_timeout: Duration::from_millis(common.remote_timeout_ms),
    };
    let factory = || spec.build(&ctx);
    let mut opts = HarnessOptions::new(protocol, cfg);
    opts.noc_thresholds = common.noc_at.clone();
    opts.workers = common.workers;
    let report = evaluate_dataset(&dataset, &factory, &opts)?;
    report.emit(&common.out)?;
    print_summary(&report);
    if report.errors.is_empty() {
        Ok(())
    } else {
        for e in &report.errors {
            eprintln!("image {}: {}", e.image_id, e.message);
        }
        Err(CliError::PartialFailure { failed: report.errors.len(), total: report.metrics.images + report.errors.len() })
    }
}

fn print_summary(report: &EvalReport) {
    for row in report.metric_rows() {
        println!("{:<28} {}", row.0, row.1);
    }
}

fn extract_features(a: &ExtractArgs) -> Result<(), CliError> {
    let seed = match a.backbone.split_once(':') {
        Some(("stub", s)) => s.parse::<u64>().map_err(|e| CliError::Config(format!("--backbone seed: {e}")))?,
        _ => return Err(CliError::Config(format!("unsupported backbone '{}' (expected stub:SEED)", a.backbone))),
    };
    let dataset = Dataset::open(&a.dataset)?;
    let mut cfg = NeuralPredictor::default_config(dataset.manifest().modality_channels());
    if let Some(s) = a.size {
        cfg.image_size = (s, s);
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let backbone = StubBackbone::new(cfg.stub_backbone(), seed).map_err(|e| CliError::Config(e.to_string()))?;
    for id in dataset.ids() {
        let sample = dataset.load_sample(id)?;
        let rgb = mmms_nn::ops::interpolate_bilinear(&sample.rgb, cfg.image_size.0, cfg.image_size.1)
            .map_err(|e| CliError::Predictor(e.to_string()))?;
        let features = backbone.features(id, &rgb).map_err(|e| CliError::Predictor(e.to_string()))?;
        let path = save_archive(&a.out, id, &features).map_err(|e| CliError::Config(format!("{}: {e}", a.out.display())))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn gen_synth(a: &GenSynthArgs) -> Result<(), CliError> {
    let mut cfg = SynthConfig::new(a.seed, a.count, a.surfaces, a.overlap);
    cfg.height = a.height;
    cfg.width = a.width;
    cfg.noise = a.noise;
    cfg.min_contrast = a.min_contrast;
    let ds = write_synthetic(&cfg, &a.out).map_err(|e| match e {
        DatasetError::Synth(m) => CliError::Config(m),
        other => other.into(),
    })?;
    println!("wrote {} images to {}", ds.ids().len(), ds.root().display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let spec = parse_spec(&a.predictor, None)?;
    let dataset = Dataset::open(&a.dataset)?;
    let mut opts = ServiceOptions::new(spec);
    opts.eval = EvalConfig::new(a.theta_iou, a.theta_avg, a.max_clicks)?;
    opts.idle_timeout = Duration::from_secs(a.idle_timeout);
    opts.static_dir = a.static_dir;
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Config(format!("runtime: {e}")))?;
    eprintln!("listening on http://{addr}");
    runtime
        .block_on(service::serve(AppState::new(dataset, opts), addr))
        .map_err(|e| CliError::Config(format!("{addr}: {e}")))
}

fn echo(a: &EchoArgs) -> Result<(), CliError> {
    let fault = match a.fault {
        FaultArg::None => EchoFault::None,
        FaultArg::Malformed => EchoFault::MalformedCounts,
        FaultArg::Hang => EchoFault::Hang,
        FaultArg::Crash => EchoFault::Crash,
        FaultArg::Error => EchoFault::ErrorReply,
        FaultArg::CrashOnce => EchoFault::CrashOnce(
            a.marker.clone().ok_or_else(|| CliError::Config("--fault crash-once needs --marker".into()))?,
        ),
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let exit = run_echo_child(BufReader::new(stdin.lock()), stdout.lock(), &fault)
        .map_err(|e| CliError::Predictor(format!("echo child: {e}")))?;
    let _ = std::io::stdout().flush();
    match exit {
        EchoExit::InputClosed => Ok(()),
        EchoExit::Crashed => Err(CliError::Predictor("simulated crash".into())),
    }
}
