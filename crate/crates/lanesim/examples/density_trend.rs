//! Long-running experiment (roughly one to two hours on a desktop CPU, not
//! part of the test suite): train a multi-agent policy on a reduced
//! 1 km / 3-lane scene, then sweep the agent fraction and check that more
//! agents mean faster and safer traffic.
//!
//!     cargo run --release --example density_trend [out_dir]

use lanesim::config::ExperimentConfig;
use lanesim::dqn::{run_training, TrainerConfig};
use lanesim::eval::run_density_sweep;
use lanesim::nn::{DenseNet, OptimizerConfig};
use lanesim::road::RoadSegment;
use lanesim::sim::SimConfig;

fn main() {
    let out = std::path::PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "out/density_trend".into()),
    );

    let road = RoadSegment {
        total_length: 1000.0,
        warmup_length: 200.0,
        lane_count: 3,
        ..RoadSegment::default()
    };
    let sim = SimConfig {
        road,
        injection_rate: 1500.0,
        agent_fraction: 0.3,
        episode_steps: 1500,
        ..SimConfig::default()
    };
    let trainer = TrainerConfig {
        episodes: 300,
        learning_start: 2000,
        eps_decay: 0.9995,
        seed: 23,
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

    println!("training 300 episodes on the reduced scene (this is the slow part)...");
    let started = std::time::Instant::now();
    let summary = run_training(&sim, &cfg.env, &trainer, &out).expect("training");
    println!("training done in {:?}", started.elapsed());

    let net =
        DenseNet::load_checkpoint(summary.final_checkpoint, OptimizerConfig::default()).unwrap();
    let (summaries, path) = run_density_sweep(&cfg, &net, &[0.1, 0.4], 20, &out).expect("sweep");

    println!("\nagent_fraction  mean_speed_mps  collision_rate_per_1k_lc");
    for s in &summaries {
        println!(
            "{:>14.2}  {:>14.3}  {:>24}",
            s.agent_fraction,
            s.mean_speed,
            s.collision_rate_per_1k_lc
                .map(|r| format!("{r:.2}"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    println!("\nsweep table written to {}", path.display());

    let speed_trend = summaries[1].mean_speed >= summaries[0].mean_speed;
    println!(
        "speed rises with agent density: {}",
        if speed_trend { "yes" } else { "NO" }
    );
    match (
        summaries[0].collision_rate_per_1k_lc,
        summaries[1].collision_rate_per_1k_lc,
    ) {
        (Some(low), Some(high)) => println!(
            "collision rate falls with agent density: {}",
            if high <= low { "yes" } else { "NO" }
        ),
        _ => println!(
            "collision rate comparison: n/a (a policy that completes no lane \
changes leaves the rate undefined)"
        ),
    }
}
