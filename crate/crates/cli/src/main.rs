mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonArgs, IntegArgs, OptimArgs, Profile, RunConfig, SolverArgs};

/// Differentiable operator experiments: lens design with the Helmholtz
/// equation, heat diffusion, and discretization swaps.
#[derive(Parser, Debug)]
#[command(name = "dfx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the sound speed of a lens to focus a point source on a target.
    LensOpt {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        optim: OptimArgs,
    },
    /// Integrate the heat equation and write snapshots.
    HeatSim {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        integ: IntegArgs,
        /// Initial field file (default: centred Gaussian, sigma = 4 cells).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Compare one Laplacian definition under finite differences and Fourier.
    SwapCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Pass threshold for the relative L2 discrepancy.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// Integer wavenumber of the `mode` profile.
        #[arg(long)]
        mode: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::LensOpt {
            common,
            solver,
            optim,
        } => {
            let mut cfg = common.resolve(RunConfig::lens_defaults())?;
            solver.apply(&mut cfg);
            optim.apply(&mut cfg);
            commands::lens_opt(&cfg)
        }
        Command::HeatSim {
            common,
            integ,
            init,
        } => {
            let mut cfg = common.resolve(RunConfig::heat_defaults())?;
            integ.apply(&mut cfg);
            commands::heat_sim(&cfg, init.as_deref())
        }
        Command::SwapCheck {
            common,
            tol,
            profile,
            mode,
        } => {
            let mut cfg = common.resolve(RunConfig::swap_defaults())?;
            if let Some(t) = tol {
                cfg.tol = t;
            }
            if let Some(p) = profile {
                cfg.profile = p;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            commands::swap_check(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
