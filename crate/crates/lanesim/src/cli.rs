//! Command-line harness: training, evaluation, density sweeps, config
//! printing, and the gradient-check suite.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 i/o, 5 checkpoint.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ExperimentConfig};
use crate::dqn::{run_training, TrainError};
use crate::env::observation_len;
use crate::eval::{run_density_sweep, run_eval, EvalError};
use crate::nn::{DenseNet, NnError, OptimizerConfig, TrainSample};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;

#[derive(Parser)]
#[command(
    name = "lanesim",
    version,
    about = "Highway lane-change simulation and DQN trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared multi-agent policy and write metrics + checkpoints.
    Train {
        /// Experiment config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for metrics.csv and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the episode count.
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Evaluate a checkpoint with greedy actions.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: u32,
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint over several agent fractions.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated agent fractions, each in [0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        /// Evaluation episodes per fraction.
        #[arg(long, default_value_t = 5)]
        episodes: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the complete default configuration key space.
    PrintConfig,
    /// Run the finite-difference gradient verification suite.
    Gradcheck,
}

/// Run the CLI against an argument vector and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful terminations
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprint!("{e}");
            return EXIT_USAGE;
        }
    };

    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

struct CliFailure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl ToString) -> CliFailure {
    CliFailure {
        code,
        message: message.to_string(),
    }
}

impl From<ConfigError> for CliFailure {
    fn from(e: ConfigError) -> Self {
        fail(EXIT_CONFIG, e)
    }
}

impl From<TrainError> for CliFailure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => fail(EXIT_CONFIG, e),
            TrainError::OutputDir { .. } | TrainError::Io(_) => fail(EXIT_IO, e),
            other => fail(1, other),
        }
    }
}

impl From<EvalError> for CliFailure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Checkpoint(_) | EvalError::ArchMismatch { .. } => fail(EXIT_CHECKPOINT, e),
            EvalError::Config(_) => fail(EXIT_CONFIG, e),
            EvalError::Io(_) => fail(EXIT_IO, e),
            other => fail(1, other),
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, CliFailure> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => Ok(ExperimentConfig::load(p)?),
    }
}

fn load_checkpoint(path: &PathBuf, opt: OptimizerConfig) -> Result<DenseNet, CliFailure> {
    DenseNet::load_checkpoint(path, opt)
        .map_err(|e| fail(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))
}

fn apply_seed(config: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(seed) = seed {
        config.sim.seed = seed;
        config.trainer.seed = seed;
    }
}

fn dispatch(command: Command) -> Result<(), CliFailure> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            episodes,
        } => {
            let mut cfg = load_config(&config)?;
            apply_seed(&mut cfg, seed);
            if let Some(episodes) = episodes {
                cfg.trainer.episodes = episodes;
            }
            cfg.validate()?;
            let summary = run_training(&cfg.sim, &cfg.env, &cfg.trainer, &out)?;
            println!(
                "trained {} episodes; final epsilon {:.4}; metrics at {}",
                summary.episodes,
                summary.final_epsilon,
                summary.metrics_path.display()
            );
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            episodes,
            out,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            apply_seed(&mut cfg, seed);
            cfg.validate()?;
            let net = load_checkpoint(&checkpoint, cfg.trainer.optimizer.clone())?;
            let outputs = run_eval(&cfg, &net, episodes, &out)?;
            let s = &outputs.summary;
            println!(
                "eval over {} episodes: mean speed {:.3} m/s; collision rate {}; mean comfort {}",
                s.episodes,
                s.mean_speed,
                s.collision_rate_per_1k_lc
                    .map(|r| format!("{r:.3}/1k lane changes"))
                    .unwrap_or_else(|| "n/a".into()),
                s.mean_comfort
                    .map(|c| format!("{c:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
            );
            Ok(())
        }
        Command::Sweep {
            config,
            checkpoint,
            fractions,
            episodes,
            out,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            apply_seed(&mut cfg, seed);
            cfg.validate()?;
            let net = load_checkpoint(&checkpoint, cfg.trainer.optimizer.clone())?;
            let (summaries, path) = run_density_sweep(&cfg, &net, &fractions, episodes, &out)?;
            for s in &summaries {
                println!(
                    "fraction {:.2}: mean speed {:.3} m/s over {} episodes",
                    s.agent_fraction, s.mean_speed, s.episodes
                );
            }
            println!("sweep table at {}", path.display());
            Ok(())
        }
        Command::PrintConfig => {
            print!("{}", ExperimentConfig::default().serialize());
            Ok(())
        }
        Command::Gradcheck => gradcheck(),
    }
}

fn gradcheck() -> Result<(), CliFailure> {
    let obs_len = observation_len(5);
    let suites: [(&str, Vec<usize>); 3] = [
        ("small", vec![4, 3, 5]),
        ("medium", vec![10, 8, 8, 5]),
        ("full", vec![obs_len, 32, 64, 64, 512, 5]),
    ];

    let mut all_ok = true;
    for (name, sizes) in &suites {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let net = DenseNet::init(sizes, OptimizerConfig::default(), &mut rng)
            .map_err(|e: NnError| fail(1, e))?;
        let inputs: Vec<Vec<f32>> = (0..2)
            .map(|_| {
                (0..sizes[0])
                    .map(|_| rand::Rng::random::<f32>(&mut rng) * 2.0 - 1.0)
                    .collect()
            })
            .collect();
        let batch: Vec<TrainSample> = inputs
            .iter()
            .enumerate()
            .map(|(i, input)| TrainSample {
                input,
                action: i % 5,
                target: 0.7 - i as f64,
            })
            .collect();

        let err = net
            .finite_diff_check(&batch, 1e-5)
            .map_err(|e| fail(1, e))?;
        let ok = err < 1e-4;
        all_ok &= ok;
        println!(
            "gradcheck {name} {sizes:?}: max relative error {err:.3e} [{}]",
            verdict(ok)
        );

        let corrupted = net
            .finite_diff_check_corrupted(&batch, 1e-5)
            .map_err(|e| fail(1, e))?;
        let caught = corrupted > 5e-2;
        all_ok &= caught;
        println!(
            "gradcheck {name} fault injection: reported error {corrupted:.3e} [{}]",
            verdict(caught)
        );
    }

    if all_ok {
        Ok(())
    } else {
        Err(fail(1, "gradient verification failed"))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}
