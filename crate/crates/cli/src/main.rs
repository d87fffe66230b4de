//! `hnn-score`: synthesize data, train and evaluate scoring models, score
//! responses, benchmark training/inference time, and compare per-aspect
//! accuracy tables.
//!
//! Every failure ends the process with a nonzero exit code and one line on
//! stderr of the form `error[<category>]: <message>`.

mod commands;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hnn_scoring::corpus::SplitScheme;
use hnn_scoring::pipeline::ModelKind;

/// Default directory for relative `--data` paths.
pub const DATA_DIR_ENV: &str = "HNN_SCORE_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "hnn-score", version, about = "Multi-aspect scoring of short written responses")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Master seed; overrides the seed in the config or spec file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration (JSON). A run manifest is accepted too.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Primary output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    /// Machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic corpus as JSONL.
    Synth {
        /// Synthetic corpus spec (JSON). A run manifest is accepted too.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of responses; overrides the spec.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model and evaluate it on the held-out split.
    Train {
        #[arg(long, value_parser = parse_kind)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        /// Override the split scheme chosen by model kind.
        #[arg(long, value_parser = parse_scheme)]
        split: Option<SplitScheme>,
        /// Stratify held-out sets on the first aspect.
        #[arg(long)]
        stratify: bool,
    },
    /// Evaluate a trained model on a labeled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score one response, or a file with one response per line.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Time training and inference for one or more model kinds.
    Bench {
        #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "hnn,nb")]
        models: Vec<ModelKind>,
        /// Labeled dataset; a synthetic corpus of `--n` items is used if absent.
        #[arg(long, conflicts_with = "n")]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Mean/SD per model and paired one-tailed t-tests against a baseline.
    Stats {
        /// Accuracy table (JSON); the bundled reference table if absent.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long, default_value = "HNN")]
        baseline: String,
    },
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: hnn_scoring::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<SplitScheme, String> {
    match s {
        "shallow" => Ok(SplitScheme::Shallow),
        "deep" => Ok(SplitScheme::Deep),
        _ => Err(format!("unknown split {s:?} (expected shallow or deep)")),
    }
}

#[derive(Debug)]
pub enum CliError {
    Core(hnn_scoring::Error),
    Exists(PathBuf),
    Usage(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Exists(_) => "exists",
            CliError::Usage(_) => "usage",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Exists(p) => write!(f, "{} already exists (use --force to overwrite)", p.display()),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl From<hnn_scoring::Error> for CliError {
    fn from(e: hnn_scoring::Error) -> Self {
        CliError::Core(e)
    }
}

/// Relative paths resolve against `HNN_SCORE_DATA_DIR` when it is set.
pub fn data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn write_output(path: &Path, bytes: &[u8], force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    std::fs::write(path, bytes).map_err(|e| {
        CliError::Core(hnn_scoring::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Writes to `--out` if given, stdout otherwise.
pub fn emit(out: Option<&Path>, text: &str, force: bool) -> Result<(), CliError> {
    match out {
        Some(path) => write_output(path, text.as_bytes(), force),
        None => {
            let mut stdout = std::io::stdout().lock();
            // A closed pipe is not worth a diagnostic.
            let _ = stdout.write_all(text.as_bytes());
            let _ = stdout.flush();
            Ok(())
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                _ => 1,
            })
        }
    }
}
