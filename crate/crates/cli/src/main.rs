mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::report::{CliError, Summary, EXIT_CHECK_FAILED, EXIT_INPUT};

/// Solver and verification tools for time-fractional (subdiffusion) problems.
#[derive(Debug, Parser)]
#[command(name = "subdiff", version)]
struct Cli {
    /// Flat key = value file; keys mirror the long flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the JSON summary (default: stdout).
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one problem and write the trajectory.
    Solve(SolveArgs),
    /// Error study over grading exponents and step counts.
    Convergence(ConvergenceArgs),
    /// Assemble the discrete Caputo operator and check its exactness properties.
    OperatorCheck(OperatorArgs),
    /// Monotone representation, inverse-monotonicity and randomized comparison trials.
    MonotonicityProbe(ProbeArgs),
    /// Fit the stability barrier constant across step counts.
    BarrierCheck(BarrierArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Fractional order in (0, 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    /// Interior spatial nodes.
    #[arg(long = "N")]
    pub nodes: Option<usize>,
    /// linear-sine, semilinear-sine, or a problem file.
    #[arg(long)]
    pub problem: Option<String>,
    /// Reaction strength for semilinear-sine.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// fixed-point or newton.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// l2 or l1.
    #[arg(long)]
    pub flavor: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Grading exponent.
    #[arg(long)]
    pub r: Option<f64>,
    /// Time steps.
    #[arg(long = "M")]
    pub steps: Option<usize>,
    /// Write every k-th node to the CSV.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<f64>>,
    #[arg(long = "M", value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    /// eigen or fine.
    #[arg(long = "ref")]
    pub reference: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OperatorArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// graded, or a CSV file of mesh points.
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long = "M")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub flavor: Option<String>,
    /// Coefficient CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "M")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Probe inverse-monotonicity of the operator plus lambda instead.
    #[arg(long = "plus-lambda")]
    pub plus_lambda: bool,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// beta CSV (plain mode, when a representation exists).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BarrierArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Use ell = 1 + ln(t_j / tau_1) in the logarithmic case.
    #[arg(long = "sharp-ell")]
    pub sharp_ell: bool,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long = "M", value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<Summary, CliError> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let exec = if cfg.switch(cli.sequential, "sequential")? { subdiff::Exec::Sequential } else { subdiff::Exec::default() };
    let mut summary = match cli.command {
        Command::Solve(a) => commands::solve(&cfg, a, exec),
        Command::Convergence(a) => commands::convergence(&cfg, a, exec),
        Command::OperatorCheck(a) => commands::operator_check(&cfg, a, exec),
        Command::MonotonicityProbe(a) => commands::monotonicity_probe(&cfg, a, exec),
        Command::BarrierCheck(a) => commands::barrier_check(&cfg, a),
    }?;
    summary.exec = if exec.is_parallel() { "parallel" } else { "sequential" };
    Ok(summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    let json_path = cli.json.clone();
    let json_from_config = cli.config.as_ref().and_then(|p| ConfigFile::load(p).ok()).and_then(|c| c.raw("json").map(PathBuf::from));
    let summary = match run(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("subdiff: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    match json_path.or(json_from_config) {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, text + "\n") {
                eprintln!("subdiff: cannot write {}: {e}", path.display());
                return ExitCode::from(EXIT_INPUT as u8);
            }
        }
        None => println!("{text}"),
    }
    if summary.passed {
        ExitCode::SUCCESS
    } else {
        eprintln!("subdiff: {} check failed", summary.command);
        ExitCode::from(EXIT_CHECK_FAILED as u8)
    }
}
