//! One binary, subcommand style: train models, sample, reconstruct,
//! interpolate, evaluate, and dump schedules. Configuration comes from a
//! TOML file; flags override file values. Exit codes: 0 success, 1 usage or
//! configuration error, 2 runtime error. The `LRDM_OUT` environment
//! variable overrides the output root for relative `--out` paths.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, CliResult};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "lrdm", version, about = "Desk-scale diffusion models with representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (relative paths resolve under $LRDM_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metrics, and config echo.
    Train {
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override trainer.mode (dm|lrdm|tlrdm|lvae).
        #[arg(long)]
        mode: Option<String>,
        /// Override trainer.lambda.
        #[arg(long)]
        lambda: Option<f64>,
        /// Override trainer.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override trainer.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override trainer.parameterization (noise|image|mean).
        #[arg(long)]
        parameterization: Option<String>,
        /// Override trainer.weighting (simple|vlb).
        #[arg(long)]
        weighting: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Draw unconditional (or class-conditional) samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// ancestral | ddim
        #[arg(long, default_value = "ancestral")]
        sampler: String,
        /// Number of strided timesteps; 0 = all.
        #[arg(long, default_value_t = 0)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Class label for class-conditional checkpoints.
        #[arg(long)]
        class: Option<usize>,
        /// Parallel sampling shards.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also record one chain's (t, x_t, x0_hat) trace.
        #[arg(long)]
        trace: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Encode held-out points and decode them back through the reverse
    /// process.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// ddim (inverted terminal noise, deterministic) | ancestral
        #[arg(long, default_value = "ddim")]
        mode: String,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Decode samples along the spherical path between two held-out points.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        index_a: usize,
        #[arg(long, default_value_t = 1)]
        index_b: usize,
        /// ddim | ancestral
        #[arg(long, default_value = "ddim")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Distortion curves, KL diagnostics, sampling quality, and
    /// reconstruction metrics for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides analysis.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write every timestep coefficient of a linear schedule as CSV.
    ScheduleDump {
        #[arg(long, default_value_t = 100)]
        t_count: usize,
        #[arg(long)]
        beta_start: Option<f64>,
        #[arg(long)]
        beta_end: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn load_config(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            mode,
            lambda,
            steps,
            seed,
            parameterization,
            weighting,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(m) = mode {
                cfg.trainer.mode = m;
            }
            if let Some(l) = lambda {
                cfg.trainer.lambda = l;
            }
            if let Some(s) = steps {
                cfg.trainer.steps = s;
            }
            if let Some(s) = seed {
                cfg.trainer.seed = s;
            }
            if let Some(p) = parameterization {
                cfg.trainer.parameterization = Some(p);
            }
            if let Some(w) = weighting {
                cfg.trainer.weighting = w;
            }
            let out = commands::prepare_out_dir(out.out, "runs/train", out.force)?;
            commands::run_train(commands::TrainArgs { config: cfg, out })
        }
        Command::Sample {
            checkpoint,
            n,
            sampler,
            steps,
            seed,
            class,
            jobs,
            trace,
            out,
        } => {
            let out = commands::prepare_out_dir(out.out, "runs/sample", out.force)?;
            commands::run_sample(commands::SampleArgs {
                checkpoint,
                n,
                sampler,
                steps,
                seed,
                class,
                jobs,
                out,
                trace,
            })
        }
        Command::Reconstruct {
            checkpoint,
            config,
            mode,
            n,
            seed,
            out,
        } => {
            let cfg = load_config(&config)?;
            let out = commands::prepare_out_dir(out.out, "runs/reconstruct", out.force)?;
            commands::run_reconstruct(commands::ReconstructArgs {
                checkpoint,
                config: cfg,
                mode,
                n,
                seed,
                out,
            })
        }
        Command::Interpolate {
            checkpoint,
            config,
            points,
            index_a,
            index_b,
            mode,
            seed,
            out,
        } => {
            let cfg = load_config(&config)?;
            let out = commands::prepare_out_dir(out.out, "runs/interpolate", out.force)?;
            commands::run_interpolate(commands::InterpolateArgs {
                checkpoint,
                config: cfg,
                points,
                index_a,
                index_b,
                mode,
                seed,
                out,
            })
        }
        Command::Eval {
            checkpoint,
            config,
            seed,
            jobs,
            out,
        } => {
            let cfg = load_config(&config)?;
            let out = commands::prepare_out_dir(out.out, "runs/eval", out.force)?;
            commands::run_eval(commands::EvalArgs {
                checkpoint,
                config: cfg,
                seed,
                jobs,
                out,
            })
        }
        Command::ScheduleDump {
            t_count,
            beta_start,
            beta_end,
            out,
        } => {
            let out = commands::prepare_out_dir(out.out, "runs/schedule", out.force)?;
            commands::run_schedule_dump(commands::ScheduleDumpArgs {
                t_count,
                beta_start,
                beta_end,
                out,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendered help/usage text but exit with the
            // documented usage code
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
