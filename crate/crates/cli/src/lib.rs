//! `scorpion` command line: argument parsing, exit codes and the thread pool.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 when the data could not be
//! read or processed. Every data output is written atomically.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "scorpion", version, about = "Scanner-paired histopathology toolkit")]
pub struct Cli {
    /// Seed for every random choice; falls back to SCORPION_SEED, then 0.
    #[arg(long, global = true, env = "SCORPION_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 = one per logical core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Progress messages on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the affine map from a moving scan onto a reference scan.
    Register(RegisterArgs),
    /// Cut aligned patches from a reference scan and registered scans into a dataset.
    Extract(ExtractArgs),
    /// Apply one style augmentation to an image.
    Augment(AugmentArgs),
    /// Unpaired statistics, paired deviations and their separability.
    Analyze(AnalyzeArgs),
    /// Inter-scanner consistency of precomputed predictions or a trained model.
    Evaluate(EvaluateArgs),
    /// Train the segmenter with the consistency loss.
    Train(TrainArgs),
    /// Train over a λ grid with several seeds and plot the trade-off.
    Sweep(SweepArgs),
    /// Write the synthetic benchmark's labeled, scanner-paired eval set to disk.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    /// Output JSON: {"matrix", "inliers", "mean_error"}.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1500)]
    pub max_keypoints: usize,
    #[arg(long, default_value_t = 0.75)]
    pub ratio: f64,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 3.0)]
    pub inlier_tol: f64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Scanner id of the reference scan.
    #[arg(long)]
    pub reference_id: String,
    #[arg(long)]
    pub reference: PathBuf,
    /// Another scan as ID=PATH; repeat per scanner.
    #[arg(long = "scan", value_parser = parse_keyed_path, required = true)]
    pub scans: Vec<(String, PathBuf)>,
    /// Registration JSON as ID=PATH; scans without one are registered here.
    #[arg(long = "transform", value_parser = parse_keyed_path)]
    pub transforms: Vec<(String, PathBuf)>,
    /// Number of random regions.
    #[arg(long, default_value_t = 10)]
    pub regions: usize,
    /// Region side in reference pixels.
    #[arg(long, default_value_t = 256)]
    pub region_size: usize,
    /// Side of the written patches.
    #[arg(long, default_value_t = 256)]
    pub patch_size: usize,
    /// Physical side of a region, recorded in the manifest.
    #[arg(long, default_value_t = 800.0)]
    pub micron_extent: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Colorjitter,
    Randstainna,
    Fda,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Directory of style images: FDA targets, or the RandStainNA corpus.
    #[arg(long)]
    pub style_pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    #[arg(long, value_parser = parse_range, default_value = "0.8,1.2")]
    pub brightness: (f64, f64),
    #[arg(long, value_parser = parse_range, default_value = "0.8,1.2")]
    pub contrast: (f64, f64),
    #[arg(long, value_parser = parse_range, default_value = "0.8,1.2")]
    pub saturation: (f64, f64),
    #[arg(long, default_value_t = 0.05)]
    pub hue: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Reference scanner for paired deviations (default: first in the manifest).
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["predictions_dir", "model"])))]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Probability maps stored as <dir>/<sample_id>/<scanner>.prob.
    #[arg(long)]
    pub predictions_dir: Option<PathBuf>,
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SaChoice {
    None,
    Colorjitter,
    Randstainna,
    Fda,
}

/// Synthetic benchmark shape.
#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Seed of the synthetic data, independent of the training seed.
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 8)]
    pub n_train: usize,
    #[arg(long, default_value_t = 8)]
    pub n_val: usize,
    #[arg(long, default_value_t = 16)]
    pub n_eval: usize,
    #[arg(long, default_value_t = 3)]
    pub scanners: usize,
    #[arg(long, default_value_t = 64)]
    pub bench_patch_size: usize,
    #[arg(long, default_value_t = 3.0)]
    pub tissue_complexity: f64,
    #[arg(long, default_value_t = 1.5)]
    pub scanner_strength: f64,
}

/// Training hyperparameters.
#[derive(Debug, Args)]
pub struct TrainConfigArgs {
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value = "fda")]
    pub sa: SaChoice,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// Probability of also feeding the style-augmented image to the supervised branch.
    #[arg(long, default_value_t = 0.5)]
    pub sa_augment_prob: f64,
    #[arg(long)]
    pub no_flips: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[command(flatten)]
    pub config: TrainConfigArgs,
    #[command(flatten)]
    pub bench: BenchArgs,
    /// Labeled paired manifest to train on; the synthetic benchmark is used when absent.
    #[arg(long, requires = "val_manifest")]
    pub train_manifest: Option<PathBuf>,
    #[arg(long, requires = "train_manifest")]
    pub val_manifest: Option<PathBuf>,
    /// Scanner whose patches are used from the manifests (default: first listed).
    #[arg(long)]
    pub scanner: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,0.5,1,5")]
    pub lambdas: Vec<f64>,
    /// Repetitions per λ.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[command(flatten)]
    pub config: TrainConfigArgs,
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_keyed_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), PathBuf::from(v))),
        _ => Err(format!("expected ID=PATH, got {s:?}")),
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(lo)?, num(hi)?))
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(scorpion::Error),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<scorpion::Error> for Failure {
    fn from(e: scorpion::Error) -> Self {
        match e {
            // raised by core checks on values that came straight from flags
            scorpion::Error::InvalidArgument(m) => Failure::Usage(m),
            e => Failure::Data(e),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(written) => {
            let mut out = std::io::stdout().lock();
            for path in written {
                let _ = writeln!(out, "wrote {}", path.display());
            }
            EXIT_OK
        }
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

/// Runs the parsed command on a pool of `cli.jobs` threads; returns the files written.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {} threads: {e}", cli.jobs)))?;
    pool.install(|| commands::dispatch(cli))
}
