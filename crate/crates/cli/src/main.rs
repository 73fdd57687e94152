//! `mmgm`: simulate, fit and test multi-session matrix-variate graphical
//! models from the command line.
//!
//! Every subcommand accepts `--config FILE` (JSON); flags override the file.
//! Exit codes: 0 success, 1 user error, 2 internal error. Failures print
//! `{"error": {"kind", "message", "exit_code"}}` on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
    exit_code: u8,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: "ConfigError".into(),
            message: message.into(),
            exit_code: 1,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError {
            kind: "IoFailure".into(),
            message: format!("{}: {e}", path.display()),
            exit_code: 1,
        }
    }
}

impl From<mmgm::Error> for CliError {
    fn from(e: mmgm::Error) -> Self {
        CliError {
            kind: e.kind().into(),
            message: e.to_string(),
            exit_code: if e.is_user_error() { 1 } else { 2 },
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: &'a str,
    exit_code: u8,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Parser, Debug)]
#[command(name = "mmgm", version, about = "Shared spatial graphs across sessions of matrix-variate data")]
struct Cli {
    /// Worker threads (also MMGM_THREADS); defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a multi-session dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Fit spatial and temporal models to a dataset.
    Fit(FitArgs),
    /// Simultaneous bootstrap test of an edge set.
    Test(TestArgs),
    /// Coverage study of the bootstrap confidence region.
    Coverage(CoverageArgs),
    /// ROC comparison of the group method with per-session fits.
    Roc(RocArgs),
}

#[derive(Args, Debug, Default)]
pub struct SimulationFlags {
    /// random | hub | chain
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Trials per session: one value for all sessions or a comma list.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Temporal decay exponents, comma list (one per session).
    #[arg(long)]
    pub temporal_alpha: Option<String>,
    /// Edge probability of the random graph.
    #[arg(long)]
    pub edge_prob: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct FitFlags {
    /// theory | cv | <value> | <comma list per node>
    #[arg(long)]
    pub gamma: Option<String>,
    /// Multiplier of the theoretical rate when --gamma theory.
    #[arg(long)]
    pub c0: Option<f64>,
    /// Folds when --gamma cv.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Use the literal penalty instead of scaling it by each node's RMS.
    #[arg(long)]
    pub no_target_scaling: bool,
    /// Band widths, one per session.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// proposition | proof
    #[arg(long)]
    pub bandwidth_rule: Option<String>,
    /// Temporal decay exponents used for the default band width.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Singular-value truncation level.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimulationFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory written by `fit`; refits from --data when absent.
    #[arg(long)]
    pub fit_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// off-diagonal | zero | cross-block:A..B,C..D | pairs:i-j;k-l | file:PATH
    #[arg(long)]
    pub edges: Option<String>,
    /// CSV with one row per session and one ±1 column per edge.
    #[arg(long)]
    pub signs: Option<PathBuf>,
    /// Significance level.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tolerance of the c-level null max |ρ| ≤ c.
    #[arg(long)]
    pub c: Option<f64>,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimulationFlags,
    /// Seed of the simulated ground truth.
    #[arg(long)]
    pub sim_seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Nominal levels, comma list.
    #[arg(long)]
    pub levels: Option<String>,
    /// Comma list of zero | off.
    #[arg(long)]
    pub edge_sets: Option<String>,
    /// Master seed of the replications.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Args, Debug)]
pub struct RocArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimulationFlags,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Ascending p-value thresholds, comma list.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitFlags,
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let env = std::env::var("MMGM_THREADS").ok();
    let threads = match (flag, env) {
        (Some(t), _) => Some(t),
        (None, Some(v)) => Some(
            v.parse::<usize>()
                .map_err(|_| CliError::config(format!("MMGM_THREADS must be an integer, got `{v}`")))?,
        ),
        (None, None) => None,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::config("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    let summary = match cli.command {
        Command::Simulate(a) => commands::simulate(a)?,
        Command::Fit(a) => commands::fit(a)?,
        Command::Test(a) => commands::test(a)?,
        Command::Coverage(a) => commands::coverage(a)?,
        Command::Roc(a) => commands::roc(a)?,
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn report(e: &CliError) -> ExitCode {
    let body = ErrorReport {
        error: ErrorBody {
            kind: &e.kind,
            message: &e.message,
            exit_code: e.exit_code,
        },
    };
    eprintln!("{}", serde_json::to_string(&body).expect("error serializes"));
    ExitCode::from(e.exit_code)
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
            return report(&CliError {
                kind: "UsageError".into(),
                message: e.to_string().trim().to_string(),
                exit_code: 1,
            });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
