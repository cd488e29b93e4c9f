//! Command-line front end: simulate the circling scenario, replay recorded
//! bearing/velocity logs, or sweep gains for basin-of-attraction studies.

mod config;
mod engine;
mod error;
mod output;
mod records;
mod replay;
mod simulate;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "vslam",
    about = "Equivariant visual-SLAM observer: simulation, replay and gain sweeps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum IntegratorArg {
    Euler,
    Rk4,
}

impl From<IntegratorArg> for vslam_core::observer::Integrator {
    fn from(value: IntegratorArg) -> Self {
        match value {
            IntegratorArg::Euler => vslam_core::observer::Integrator::Euler,
            IntegratorArg::Rk4 => vslam_core::observer::Integrator::Rk4,
        }
    }
}

#[derive(Parser)]
struct CommonOverrides {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the integrator.
    #[arg(long, value_enum)]
    integrator: Option<IntegratorArg>,
    /// Override the bearing gain.
    #[arg(long)]
    bearing_gain: Option<f64>,
    /// Override the depth gain.
    #[arg(long)]
    depth_gain: Option<f64>,
}

impl CommonOverrides {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(seed) = self.seed {
            config.scenario.seed = seed;
        }
        if let Some(integrator) = self.integrator {
            config.observer.integrator = integrator.into();
        }
        if let Some(k) = self.bearing_gain {
            config.observer.bearing_gain = k;
        }
        if let Some(alpha) = self.depth_gain {
            config.observer.depth_gain = alpha;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scenario and write traces plus replayable records.
    Simulate {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Replay recorded measurement and velocity logs through the observer.
    Replay {
        #[arg(long)]
        config: PathBuf,
        /// Measurement records CSV.
        #[arg(long)]
        records: PathBuf,
        /// Velocity samples CSV.
        #[arg(long)]
        velocities: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference trajectory CSV (t,x,y,z) to align against.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Fit a similarity (scaled) alignment instead of a rigid one.
        #[arg(long)]
        align_scale: bool,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Run the basin-of-attraction gain sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated bearing-gain grid, e.g. "1,5,25".
        #[arg(long)]
        gains: Option<String>,
        /// Number of initial-condition samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg);
            simulate::run(&cfg, &out)
        }
        Command::Replay {
            config,
            records,
            velocities,
            out,
            reference,
            align_scale,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg);
            let inputs = replay::ReplayInputs {
                records: &records,
                velocities: &velocities,
                reference: reference.as_deref(),
                align_scale,
            };
            replay::run(&cfg, &inputs, &out)
        }
        Command::Sweep {
            config,
            out,
            gains,
            samples,
            workers,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg);
            let gains: Vec<f64> = match gains {
                Some(text) => text
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| {
                            CliError::usage(anyhow::anyhow!("bad gain value {s:?}"))
                        })
                    })
                    .collect::<CliResult<_>>()?,
                None => cfg.sweep.gains.clone(),
            };
            let samples = samples.unwrap_or(cfg.sweep.samples);
            if let Some(workers) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build_global()
                    .map_err(|e| CliError::usage(anyhow::anyhow!(e)))?;
            }
            sweep::run(&cfg, &gains, samples, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
