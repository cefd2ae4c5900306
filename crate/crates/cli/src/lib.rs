//! `petkin` command-line surface: simulate datasets, fit kinetic models,
//! train and apply the invertible network, and score predictions.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or runtime
//! error.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use petkin_core::config::ExperimentConfig;
use petkin_core::io::ArrayFile;

pub mod evaluate;
pub mod fit;
pub mod predict;
pub mod simulate;
pub mod train;

#[derive(Debug, Parser)]
#[command(name = "petkin", version, about = "Dynamic PET kinetic modelling toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "PETKIN_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset of noisy/noise-free dynamic studies.
    Simulate,
    /// Fit a kinetic model voxel by voxel.
    Fit(FitArgs),
    /// Train the network on a simulated dataset.
    Train(TrainArgs),
    /// Predict parameter images and the full sequence from early frames.
    Predict(PredictArgs),
    /// Compare a prediction with a reference.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Nlls,
    Logan,
    Patlak,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Dynamic image `[T, H, W]` or a single curve `[T]`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: FitMethod,
    /// Optional mask: label array or `sample.json`; nonzero voxels are fitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Sampled plasma input (CSV `time,value`, minutes) replacing the configured one.
    #[arg(long)]
    pub input_function: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Epochs to run (default: up to the configured total).
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dynamic image whose leading frames feed the network.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Label array or `sample.json`; one set of ROI statistics per label.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// First frame to score (inclusive).
    #[arg(long, default_value_t = 0)]
    pub first_frame: usize,
    /// One past the last frame to score (default: all).
    #[arg(long)]
    pub last_frame: Option<usize>,
    /// PSNR/SSIM peak (default: maximum of the scored target frames).
    #[arg(long)]
    pub peak: Option<f64>,
    /// Row for line profiles.
    #[arg(long)]
    pub profile_row: Option<usize>,
    /// Column for line profiles.
    #[arg(long)]
    pub profile_col: Option<usize>,
}

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<petkin_core::Error> for Failure {
    fn from(e: petkin_core::Error) -> Self {
        match e {
            petkin_core::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub(crate) fn data_err(msg: impl Into<String>) -> Failure {
    Failure::Data(msg.into())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be >= 1".into()));
        }
        // A pool may already exist when several commands run in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Simulate => simulate::run(&cli.common),
        Command::Fit(a) => fit::run(&cli.common, a),
        Command::Train(a) => train::run(&cli.common, a),
        Command::Predict(a) => predict::run(&cli.common, a),
        Command::Evaluate(a) => evaluate::run(&cli.common, a),
    }
}

/// Loads and validates `--config`, applying `--seed`.
pub(crate) fn load_config(common: &Common) -> CmdResult<ExperimentConfig> {
    let path = common.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// `--out`, or `<output_dir>/<default>` from the configuration.
pub(crate) fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>, default: &str) -> CmdResult<PathBuf> {
    let dir = match (&common.out, cfg) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) if !c.output_dir.is_empty() => Path::new(&c.output_dir).join(default),
        _ => return Err(Failure::Usage("--out is required".into())),
    };
    std::fs::create_dir_all(&dir).map_err(|e| data_err(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

pub(crate) fn read_array(path: &Path) -> CmdResult<ArrayFile> {
    ArrayFile::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Mean blood fraction of the configured ROI table; the constant used by
/// the physics terms and voxel fits.
pub(crate) fn mean_blood_fraction(cfg: &ExperimentConfig) -> f64 {
    let table = cfg.roi_table();
    table.iter().map(|p| p.vb).sum::<f64>() / table.len() as f64
}

/// Label ids from a label array (`[H, W]`, values rounded) or from the
/// `labels` field of a `sample.json`. Returns `(width, height, labels)`.
pub(crate) fn read_labels(path: &Path) -> CmdResult<(usize, usize, Vec<u16>)> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let get = |k: &str| v.get(k).and_then(|x| x.as_u64()).ok_or_else(|| data_err(format!("{}: missing {k}", path.display())));
        let (w, h) = (get("width")? as usize, get("height")? as usize);
        let labels: Vec<u16> = serde_json::from_value(v.get("labels").cloned().unwrap_or_default())
            .map_err(|e| data_err(format!("{}: labels: {e}", path.display())))?;
        if labels.len() != w * h {
            return Err(data_err(format!("{}: {} labels for a {w}x{h} image", path.display(), labels.len())));
        }
        return Ok((w, h, labels));
    }
    let a = read_array(path)?;
    let img = a.to_image().map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let labels = img.data.iter().map(|v| if v.is_finite() && *v > 0.0 { v.round().min(u16::MAX as f64) as u16 } else { 0 }).collect();
    Ok((img.width, img.height, labels))
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> CmdResult {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
