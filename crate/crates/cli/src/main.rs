//! Command-line front end for the dissipation-geodesic solver.
//!
//! Exit codes: 0 when the requested computation converged and verified,
//! 1 for configuration or usage errors, 2 when the solver stopped short
//! of its tolerances (best iterate artifacts are still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod fd;
mod io;

/// Error carrying the process exit code alongside its message.
#[derive(Debug)]
pub enum CliError {
    /// Bad config, bad input file, or misuse; exits 1.
    Config(String),
    /// The computation ran but did not reach its tolerances; exits 2.
    NonConverged(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn config_from(err: impl std::fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn nonconverged(msg: impl Into<String>) -> Self {
        CliError::NonConverged(msg.into())
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::NonConverged(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::NonConverged(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "subrig",
    version,
    about = "Plans minimum-dissipation motions for slender swimmers"
)]
struct Cli {
    /// Directory that receives all artifacts (overrides output_dir from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress progress lines; errors still go to stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the motion problem described by a config file.
    Solve {
        /// JSON config describing the problem, discretization, and solver.
        #[arg(long)]
        config: PathBuf,
        /// Override the solver seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of refinement levels from the config.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Attach rigid placements to a shape sequence so the motion carries no momentum.
    Lift {
        /// JSON config supplying the dissipation parameters.
        #[arg(long)]
        config: PathBuf,
        /// Trajectory-format CSV with the shape sequence to lift.
        #[arg(long)]
        shapes: PathBuf,
    },
    /// Compare analytic derivatives against finite differences on random instances.
    CheckGrad {
        /// Optional config; only its solver.seed and output_dir are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the random instances.
        #[arg(long)]
        seed: Option<u64>,
        /// Relative tolerance for the gradient and Jacobian checks.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Re-solve on successively doubled time grids and estimate the convergence order.
    RefineStudy {
        #[arg(long)]
        config: PathBuf,
        /// Override the number of grid levels from the config.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Measure how much an optimized stroke improves on the prescribed traveling wave.
    CompareSerpenoid {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the built-in swimmer presets.
    PresetList,
}

fn read_threads() -> Result<Option<usize>, CliError> {
    match std::env::var("SUBRIG_THREADS") {
        Ok(raw) => {
            let n: usize = raw
                .trim()
                .parse()
                .map_err(|_| CliError::config("SUBRIG_THREADS must be a positive integer"))?;
            if n == 0 {
                return Err(CliError::config("SUBRIG_THREADS must be a positive integer"));
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::config_from(e)),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = commands::Ctx {
        out_override: cli.out,
        quiet: cli.quiet,
        threads: read_threads()?,
    };
    match cli.cmd {
        Cmd::Solve {
            config,
            seed,
            levels,
        } => commands::cmd_solve(&ctx, &config, seed, levels),
        Cmd::Lift { config, shapes } => commands::cmd_lift(&ctx, &config, &shapes),
        Cmd::CheckGrad { config, seed, tol } => {
            commands::cmd_check_grad(&ctx, config.as_deref(), seed, tol)
        }
        Cmd::RefineStudy { config, levels } => {
            commands::cmd_refine_study(&ctx, &config, levels)
        }
        Cmd::CompareSerpenoid { config } => commands::cmd_compare_serpenoid(&ctx, &config),
        Cmd::PresetList => {
            commands::cmd_preset_list();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
