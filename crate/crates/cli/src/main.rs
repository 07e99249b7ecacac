//! `funcov` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use funcov::dgp::DgpConfig;
use funcov::error::Error;
use funcov::shrink::ShrinkageRule;
use funcov_cli::commands::{self, EstimateOptions};

#[derive(Parser)]
#[command(name = "funcov", version, about = "Covariance estimation for high-dimensional functional time series")]
struct Cli {
    /// Worker thread count (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate panels from the built-in data-generating process.
    Simulate(SimulateArgs),
    /// Run the full estimation pipeline on a panel file.
    Estimate(EstimateArgs),
    /// Select the number of factors only.
    SelectQ(SelectQArgs),
    /// Cross-validate the shrinkage threshold only.
    CvRho(CvRhoArgs),
    /// Score estimate directories against their truth bundles.
    Score(ScoreArgs),
    /// Build a CIDR panel from a price CSV.
    Cidr(CidrArgs),
    /// Emit correlation matrices for an estimate directory.
    Correlate(CorrelateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of subjects (even).
    #[arg(long)]
    n: usize,
    /// Number of time points.
    #[arg(long)]
    t: usize,
    /// True factor count.
    #[arg(long)]
    q: usize,
    /// Replication count.
    #[arg(long, default_value_t = 1)]
    reps: u64,
    /// Base seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid points per curve.
    #[arg(long, default_value_t = funcov::dgp::DEFAULT_GRID_LEN)]
    grid_len: usize,
    /// Basis size.
    #[arg(long, default_value_t = funcov::dgp::DEFAULT_N_BASIS)]
    n_basis: usize,
    /// VAR warm-up steps.
    #[arg(long, default_value_t = funcov::dgp::DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Idiosyncratic scale (test hook).
    #[arg(long, default_value_t = 1.0)]
    idio_scale: f64,
    /// Bridge scale (test hook).
    #[arg(long, default_value_t = 1.0)]
    bridge_scale: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Fixed factor count (skips selection).
    #[arg(long)]
    q: Option<usize>,
    /// Factor-search cap.
    #[arg(long, default_value_t = 20)]
    q_max: usize,
    /// Explicit selection penalty.
    #[arg(long)]
    penalty: Option<f64>,
    /// Constant of the automatic penalty.
    #[arg(long, default_value_t = funcov::select::DEFAULT_PENALTY_CONSTANT)]
    penalty_constant: f64,
    /// Fixed threshold (skips cross-validation).
    #[arg(long)]
    rho: Option<f64>,
    /// Thresholding rule: hard | soft | scad | alasso.
    #[arg(long, default_value = "alasso")]
    rule: String,
    /// SCAD concavity parameter.
    #[arg(long, default_value_t = funcov::shrink::DEFAULT_SCAD_A)]
    scad_a: f64,
    /// Adaptive-lasso exponent.
    #[arg(long, default_value_t = funcov::shrink::DEFAULT_ALASSO_ETA)]
    alasso_eta: f64,
    /// Also shrink diagonal blocks.
    #[arg(long)]
    shrink_diagonal: bool,
    /// Gap size for cross-validation.
    #[arg(long, default_value_t = funcov::cv::DEFAULT_GAP)]
    cv_gap: usize,
    /// Threshold grid `lo:hi:n` (log-spaced); defaults to a data-driven grid.
    #[arg(long)]
    rho_grid: Option<String>,
}

impl PipelineArgs {
    fn to_options(&self) -> Result<EstimateOptions, Error> {
        let mut rule: ShrinkageRule = self.rule.parse()?;
        match &mut rule {
            ShrinkageRule::Scad { a } => *a = self.scad_a,
            ShrinkageRule::Alasso { eta } => *eta = self.alasso_eta,
            _ => {}
        }
        rule.validate()?;
        let rho_grid = match &self.rho_grid {
            Some(spec) => Some(commands::parse_rho_grid(spec)?),
            None => None,
        };
        Ok(EstimateOptions {
            q: self.q,
            q_max: self.q_max,
            penalty: self.penalty,
            penalty_constant: self.penalty_constant,
            rho: self.rho,
            rule,
            shrink_diagonal: self.shrink_diagonal,
            cv_gap: self.cv_gap,
            rho_grid,
        })
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Panel CSV (sidecar JSON expected alongside).
    #[arg(long)]
    panel: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectQArgs {
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Factor-search cap.
    #[arg(long, default_value_t = 20)]
    q_max: usize,
    /// Explicit penalty.
    #[arg(long)]
    penalty: Option<f64>,
    /// Constant of the automatic penalty.
    #[arg(long, default_value_t = funcov::select::DEFAULT_PENALTY_CONSTANT)]
    penalty_constant: f64,
    /// Optional JSON output path (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvRhoArgs {
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Optional JSON output path (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Estimate directories, each containing c_eps.csv, c_x.csv, truth.json.
    dirs: Vec<PathBuf>,
    /// Optional JSON output path (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CidrArgs {
    /// Price CSV with header `asset,date,time,price`.
    #[arg(long)]
    prices: PathBuf,
    /// Target grid size.
    #[arg(long, default_value_t = funcov_cli::cidr::DEFAULT_CIDR_GRID)]
    grid_len: usize,
    /// Output panel CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Estimate directory.
    #[arg(long)]
    dir: PathBuf,
    /// Normalize by square roots of diagonal HS norms (so diagonals are 1).
    #[arg(long)]
    corr_sqrt_norm: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// 2 for input/validation problems, 3 for numerical failures.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NoConvergence(_) | Error::NonFinite(_) | Error::NotSymmetric(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(args) => {
            let cfg = DgpConfig {
                n: args.n,
                t: args.t,
                q: args.q,
                grid_len: args.grid_len,
                n_basis: args.n_basis,
                burn_in: args.burn_in,
                seed: args.seed,
                idio_scale: args.idio_scale,
                bridge_scale: args.bridge_scale,
            };
            commands::cmd_simulate(&cfg, args.reps, &args.out)
        }
        Command::Estimate(args) => {
            let opts = args.pipeline.to_options()?;
            commands::cmd_estimate(&args.panel, &opts, &args.out)
        }
        Command::SelectQ(args) => {
            let text = commands::cmd_select_q(
                &args.panel,
                args.q_max,
                args.penalty,
                args.penalty_constant,
                args.out.as_deref(),
            )?;
            println!("{text}");
            Ok(())
        }
        Command::CvRho(args) => {
            let opts = args.pipeline.to_options()?;
            let text = commands::cmd_cv_rho(&args.panel, &opts, args.out.as_deref())?;
            println!("{text}");
            Ok(())
        }
        Command::Score(args) => {
            let text = commands::cmd_score(&args.dirs, args.out.as_deref())?;
            println!("{text}");
            Ok(())
        }
        Command::Cidr(args) => {
            let dropped = commands::cmd_cidr(&args.prices, args.grid_len, &args.out)?;
            for day in dropped {
                eprintln!("warning: dropped day {day} (not covered by every asset)");
            }
            Ok(())
        }
        Command::Correlate(args) => {
            commands::cmd_correlate(&args.dir, args.corr_sqrt_norm, &args.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
