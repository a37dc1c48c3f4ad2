//! `safectl`: synthesize, bound, simulate and verify probabilistically safe
//! linear state-feedback controllers.

mod artifact;
mod commands;
mod config;
mod csvio;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliResult;

#[derive(Parser)]
#[command(
    name = "safectl",
    version,
    about = "Probabilistic safe-controller synthesis for stochastic linear systems",
    after_help = "Exit codes: 0 success, 1 input error, 2 infeasible / check failed, 3 solver failure.\n\
                  SAFECTL_SOLVER_TOL overrides the default solver tolerances."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a contractive-in-probability state feedback gain.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output path for the controller artifact (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Override the synthesis regime implied by the noise section.
        #[arg(long, value_parser = ["gaussian", "dr-gaussian", "cvar"])]
        mode: Option<String>,
        /// Synthesize directly from the config's data section.
        #[arg(long)]
        data_driven: bool,
        /// Solver feasibility tolerance override.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compute an upper bound on the minimal achievable risk level.
    RiskBound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_driven: bool,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Roll out the closed loop under seeded noise and write trajectories
    /// plus a Monte Carlo summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Controller artifact produced by `synth`.
        #[arg(long)]
        controller: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        rollouts: usize,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        /// Base seed (defaults to the config's seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Estimate a noise covariance from samples with its concentration
    /// radius and certification status.
    EstimateCov {
        /// Headerless CSV, one sample per line.
        #[arg(long)]
        samples: PathBuf,
        /// Confidence parameter in (0, 1).
        #[arg(long)]
        beta: f64,
        /// Support bound L_b on the noise norm.
        #[arg(long)]
        lb: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check a controller artifact: certificate residuals plus Monte
    /// Carlo contraction frequencies.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        /// Draws per probe point.
        #[arg(long, default_value_t = 20_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn effective_tol(flag: Option<f64>) -> Option<f64> {
    flag.or_else(|| {
        std::env::var("SAFECTL_SOLVER_TOL")
            .ok()
            .and_then(|s| s.parse().ok())
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            config,
            out,
            mode,
            data_driven,
            tol,
        } => commands::cmd_synth(
            &config,
            &out,
            mode.as_deref(),
            data_driven,
            effective_tol(tol),
        ),
        Command::RiskBound {
            config,
            out,
            data_driven,
            tol,
        } => commands::cmd_risk_bound(&config, &out, data_driven, effective_tol(tol)),
        Command::Simulate {
            config,
            controller,
            out,
            rollouts,
            horizon,
            seed,
            tol,
        } => commands::cmd_simulate(
            &config,
            &controller,
            &out,
            rollouts,
            horizon,
            seed,
            effective_tol(tol),
        ),
        Command::EstimateCov {
            samples,
            beta,
            lb,
            out,
        } => commands::cmd_estimate_cov(&samples, beta, lb, &out),
        Command::Verify {
            config,
            controller,
            rollouts,
            seed,
            tol,
        } => commands::cmd_verify(&config, &controller, rollouts, seed, effective_tol(tol)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("safectl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
