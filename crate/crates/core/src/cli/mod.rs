//! Command-line entry point. Every experiment is a subcommand that reads an
//! optional strict JSON config, applies flag overrides, writes its results
//! under `--out` and finishes with a manifest.

mod artifacts;
mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use artifacts::{sha256_hex, Artifacts, Check, FileEntry, Manifest};
use config::{Config, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// Inclusive layer range written `a..b` (exclusive end), `a..=b` or `a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerRange {
    pub lo: usize,
    pub hi: usize,
}

impl FromStr for LayerRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad layer number {t:?}"));
        let (lo, hi) = if let Some((a, b)) = s.split_once("..=") {
            (num(a)?, num(b)?)
        } else if let Some((a, b)) = s.split_once("..") {
            let b = num(b)?;
            if b == 0 {
                return Err(format!("empty layer range {s:?}"));
            }
            (num(a)?, b - 1)
        } else {
            let l = num(s)?;
            (l, l)
        };
        if lo > hi {
            return Err(format!("empty layer range {s:?}"));
        }
        Ok(Self { lo, hi })
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "policylab-out")]
    pub out: PathBuf,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Trace files (repeatable).
    #[arg(long = "trace", value_name = "PATH", num_args = 1..)]
    pub traces: Vec<PathBuf>,
    /// Weights file; replaces the configured model.
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    /// Input file or directory.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "a..b")]
    pub layers: Option<LayerRange>,
    #[arg(long, value_name = "N")]
    pub bins: Option<usize>,
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub frac: Option<f64>,
    #[arg(long, value_name = "N")]
    pub ranks: Option<usize>,
    /// Output formats (repeatable); default csv and json.
    #[arg(long, value_enum)]
    pub format: Vec<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Role-conditional entropy statistics of traces.
    Analyze(CommonArgs),
    /// Generator × evaluator entropy matrices and self-advantage.
    Matrix(CommonArgs),
    /// Single-step surprise sweeps on the micro-runtime.
    Sweep(CommonArgs),
    /// Fit the relative feedback law to sweep records.
    Fit(CommonArgs),
    /// Quantile-binned hidden-state centroids.
    Centroids(CommonArgs),
    /// PCA and similarity of centroid sets.
    Geometry(CommonArgs),
    /// Centroid steering sweep.
    Steer(CommonArgs),
    /// Prefill-detection KV patching experiments.
    KvPatch(CommonArgs),
    /// Topic commitment and the prefill crossover.
    Semantic(CommonArgs),
    /// Entropy trajectories and body-window entropy.
    Traject(CommonArgs),
    /// Figures for an earlier run's results.
    Report(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Matrix(_) => "matrix",
            Command::Sweep(_) => "sweep",
            Command::Fit(_) => "fit",
            Command::Centroids(_) => "centroids",
            Command::Geometry(_) => "geometry",
            Command::Steer(_) => "steer",
            Command::KvPatch(_) => "kv-patch",
            Command::Semantic(_) => "semantic",
            Command::Traject(_) => "traject",
            Command::Report(_) => "report",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Analyze(a)
            | Command::Matrix(a)
            | Command::Sweep(a)
            | Command::Fit(a)
            | Command::Centroids(a)
            | Command::Geometry(a)
            | Command::Steer(a)
            | Command::KvPatch(a)
            | Command::Semantic(a)
            | Command::Traject(a)
            | Command::Report(a) => a,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "policylab", version, about = "Entropy, geometry and intervention experiments on traces and a micro-transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Failure of a run, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config { path: String, message: String },
    MissingInput(PathBuf),
    Failed(crate::Error),
    ChecksFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => EXIT_USAGE,
            CliError::MissingInput(_) => EXIT_MISSING_INPUT,
            CliError::Failed(_) | CliError::ChecksFailed(_) => EXIT_FAILED,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config { path, message } => write!(f, "config error at {path}: {message}"),
            CliError::MissingInput(p) => write!(f, "missing input: {}", p.display()),
            CliError::Failed(e) => write!(f, "{e}"),
            CliError::ChecksFailed(c) => write!(f, "invariant checks failed: {}", c.join("; ")),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Failed(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Loads `path` into `C`, rejecting unknown keys and foreign schema
/// versions; paths inside resolve against the file's directory.
pub fn load_config<C: Config>(path: Option<&Path>) -> CliResult<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let mut cfg: C = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if cfg.schema_version() != SCHEMA_VERSION {
        return Err(CliError::Config {
            path: "schema_version".into(),
            message: format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version()),
        });
    }
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve(base);
    Ok(cfg)
}

/// Every input must exist before anything runs.
pub fn check_inputs(paths: &[PathBuf]) -> CliResult<()> {
    for p in paths {
        if p.as_os_str().is_empty() {
            return Err(CliError::Usage("an input path is required (--input or config)".into()));
        }
        if !p.exists() {
            return Err(CliError::MissingInput(p.clone()));
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("policylab {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
