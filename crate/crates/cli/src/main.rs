use std::path::PathBuf;
use std::process::ExitCode;

use camdepth::metrics::{DepthOptions, TrajectoryOptions, DEFAULT_MAX_DEPTH};
use camdepth_cli::{commands, CliError, RunConfig, EXIT_SPEC};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "camdepth",
    version,
    about = "Camera tracking and consistent video depth for dynamic videos"
)]
struct Cli {
    /// Run config (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Recorded in the run manifest; `synth` uses it as the scene seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scene spec.
    Synth { spec: PathBuf },
    /// Solve cameras, focal and keyframe disparity.
    Solve { dataset: PathBuf },
    /// Refine full-resolution depth using a solve output.
    Cvd { dataset: PathBuf, solve: PathBuf },
    /// Trajectory metrics of an estimate against ground truth.
    EvalTraj {
        est: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        no_align: bool,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Depth metrics of a directory of depth PFMs against ground truth.
    EvalDepth {
        est: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        no_fit: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: f64,
    },
}

fn require_out(out: &Option<PathBuf>) -> Result<&PathBuf, CliError> {
    out.as_ref()
        .ok_or_else(|| CliError::Config("--out is required".into()))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let config = || match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth { spec } => commands::synth(spec, require_out(&cli.out)?, cli.seed),
        Command::Solve { dataset } => {
            commands::solve(dataset, &config()?, require_out(&cli.out)?, seed)
        }
        Command::Cvd { dataset, solve } => {
            commands::cvd(dataset, solve, &config()?, require_out(&cli.out)?, seed)
        }
        Command::EvalTraj {
            est,
            gt,
            no_align,
            no_normalize,
        } => {
            let opts = TrajectoryOptions {
                align: !no_align,
                normalize_length: !no_normalize,
            };
            commands::eval_traj(est, gt, &opts, cli.out.as_deref())
        }
        Command::EvalDepth {
            est,
            gt,
            no_fit,
            max_depth,
        } => {
            let opts = DepthOptions {
                fit_scale_shift: !no_fit,
                max_depth: *max_depth,
            };
            commands::eval_depth(est, gt, &opts, cli.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_SPEC } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
