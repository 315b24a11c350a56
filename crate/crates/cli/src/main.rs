use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flatsat_cli::{
    cmd_saturate, cmd_simulate, cmd_sweep, cmd_synth, cmd_verify, exit_code, resolve_output_dir,
    RunConfig, Status, EXIT_USAGE,
};

/// Saturated flat-space control for quadcopters: synthesis, verification and simulation.
#[derive(Debug, Parser)]
#[command(name = "flatsat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize an invariant-ellipsoid certificate and write cert.toml.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Decay rate; overrides the config.
        #[arg(long)]
        alpha: Option<f64>,
        /// Gain scale recorded in the certificate; overrides the config.
        #[arg(long)]
        gamma: Option<f64>,
        /// Output directory (default: $FLATSAT_OUTPUT_DIR, then the config, then ./out).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Saturate one flat-space command onto the admissible input set.
    Saturate {
        #[arg(allow_negative_numbers = true, value_names = ["V1", "V2", "V3"], num_args = 3, required = true)]
        v: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also print the bisection scale for comparison.
        #[arg(long)]
        oracle: bool,
    },
    /// Run closed-loop simulations and write CSV traces plus summary.toml.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Certificate to use instead of synthesizing one.
        #[arg(long)]
        cert: Option<PathBuf>,
        /// Comma-separated gain scales, one run each.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        gammas: Option<Vec<f64>>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a certificate on sampled boundary points of its ellipsoid.
    Verify {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        /// Sampling seed (default: the certificate's).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Invariance study from boundary starts over several gain scales, and an
    /// optional decay-rate sweep.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cert: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Synth {
            config,
            alpha,
            gamma,
            output_dir,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if alpha.is_some() {
                cfg.synthesis.alpha = alpha;
            }
            if gamma.is_some() {
                cfg.synthesis.gamma = gamma;
            }
            cfg.validate()?;
            let dir = resolve_output_dir(output_dir.as_deref(), &cfg);
            cmd_synth(&cfg, &dir, &mut out)
        }
        Command::Saturate { v, config, oracle } => {
            let cfg = load_config(config.as_ref())?;
            cmd_saturate([v[0], v[1], v[2]], &cfg.params()?, oracle, &mut out)
        }
        Command::Simulate {
            config,
            cert,
            gammas,
            output_dir,
        } => {
            let cfg = load_config(config.as_ref())?;
            let dir = resolve_output_dir(output_dir.as_deref(), &cfg);
            cmd_simulate(&cfg, cert.as_deref(), gammas.as_deref(), &dir, &mut out)
        }
        Command::Verify {
            cert,
            samples,
            seed,
        } => cmd_verify(&cert, samples as usize, seed, &mut out),
        Command::Sweep {
            config,
            cert,
            gammas,
            starts,
            alphas,
            output_dir,
        } => {
            let cfg = load_config(config.as_ref())?;
            let dir = resolve_output_dir(output_dir.as_deref(), &cfg);
            cmd_sweep(
                &cfg,
                cert.as_deref(),
                gammas.as_deref(),
                starts,
                alphas.as_deref(),
                &dir,
                &mut out,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
