//! Desk-scale training: a single agent on an otherwise empty 1 km road
//! learns to drive at the speed limit in a few minutes of CPU time, then the
//! trained greedy policy is compared against the untrained checkpoint.
//!
//!     cargo run --release --example train_small [out_dir]

use lanesim::config::ExperimentConfig;
use lanesim::dqn::{run_training, TrainerConfig};
use lanesim::eval::eval_episodes;
use lanesim::nn::{DenseNet, OptimizerConfig};
use lanesim::road::RoadSegment;
use lanesim::sim::SimConfig;

fn mean_speed(trace: &[(f64, f64, f64)]) -> f64 {
    trace.iter().map(|s| s.2).sum::<f64>() / trace.len() as f64
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/train_small".into());
    let out = std::path::PathBuf::from(out);

    let road = RoadSegment {
        total_length: 1000.0,
        warmup_length: 100.0,
        ..RoadSegment::default()
    };
    let sim = SimConfig {
        road,
        injection_rate: 0.0,
        bootstrap_agents: 1,
        episode_steps: 300,
        ..SimConfig::default()
    };
    // a slightly hotter learning rate and faster exploration decay suit the
    // tiny scene; everything else keeps the library defaults
    let trainer = TrainerConfig {
        episodes: 200,
        learning_start: 500,
        eps_decay: 0.999,
        seed: 11,
        optimizer: OptimizerConfig {
            learning_rate: 0.001,
            ..OptimizerConfig::default()
        },
        ..TrainerConfig::default()
    };
    let cfg = ExperimentConfig {
        sim: sim.clone(),
        trainer: trainer.clone(),
        ..ExperimentConfig::default()
    };

    println!("training 200 episodes of 300 steps...");
    let started = std::time::Instant::now();
    let summary = run_training(&sim, &cfg.env, &trainer, &out).expect("training");
    println!(
        "done in {:?}; metrics at {}",
        started.elapsed(),
        summary.metrics_path.display()
    );

    let window = |r: &[Option<f64>]| r.iter().map(|v| v.unwrap()).sum::<f64>() / r.len() as f64;
    println!(
        "mean episode reward: first 20 = {:.3}, last 20 = {:.3}",
        window(&summary.episode_rewards[..20]),
        window(&summary.episode_rewards[summary.episode_rewards.len() - 20..]),
    );

    let opt = OptimizerConfig::default();
    let untrained =
        DenseNet::load_checkpoint(out.join("checkpoint_initial.bin"), opt.clone()).unwrap();
    let trained = DenseNet::load_checkpoint(out.join("checkpoint_final.bin"), opt).unwrap();

    let (_, trace0) = eval_episodes(&cfg, &untrained, 1, 5_000_000).unwrap();
    let (_, trace1) = eval_episodes(&cfg, &trained, 1, 5_000_000).unwrap();
    println!(
        "greedy mean speed: untrained {:.3} m/s, trained {:.3} m/s (0.9 v_max = {:.3})",
        mean_speed(&trace0),
        mean_speed(&trace1),
        0.9 * cfg.sim.road.v_max
    );
}
