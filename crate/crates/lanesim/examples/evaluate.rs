//! Evaluate a trained checkpoint with greedy actions: prints the summary and
//! writes the per-step timeseries plus the space-time speed grid.
//!
//!     cargo run --release --example evaluate -- <checkpoint> [out_dir] [episodes]
//!
//! A checkpoint comes from the `train` subcommand or the train_small
//! example.

use lanesim::config::ExperimentConfig;
use lanesim::eval::run_eval;
use lanesim::nn::{DenseNet, OptimizerConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(checkpoint) = args.next() else {
        eprintln!("usage: evaluate <checkpoint> [out_dir] [episodes]");
        std::process::exit(2);
    };
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "out/evaluate".into()));
    let episodes: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let config = ExperimentConfig::default();
    let net =
        DenseNet::load_checkpoint(&checkpoint, OptimizerConfig::default()).unwrap_or_else(|e| {
            eprintln!("cannot load {checkpoint}: {e}");
            std::process::exit(5);
        });

    let outputs = run_eval(&config, &net, episodes, &out).expect("evaluation");
    let s = &outputs.summary;
    println!("episodes evaluated : {}", s.episodes);
    println!("zone mean speed    : {:.3} m/s", s.mean_speed);
    match s.collision_rate_per_1k_lc {
        Some(rate) => println!("collision rate     : {rate:.3} per 1000 agent lane changes"),
        None => println!("collision rate     : n/a (no completed agent lane changes)"),
    }
    match s.mean_comfort {
        Some(c) => println!("mean comfort       : {c:.4}"),
        None => println!("mean comfort       : n/a (no agents)"),
    }
    println!("timeseries         : {}", outputs.timeseries_path.display());
    println!("space-time grid    : {}", outputs.spacetime_path.display());
}
