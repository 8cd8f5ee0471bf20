//! Pure microsimulation: human-driven traffic only, no learning.
//!
//! Rolls one episode on the default 3.5 km five-lane segment and prints
//! segment statistics every ten simulated seconds.
//!
//!     cargo run --release --example simulate [seed]

use std::collections::BTreeMap;

use lanesim::sim::{segment_stats, step, SimConfig, SimState};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42u64);
    let config = SimConfig {
        agent_fraction: 0.0,
        seed,
        ..SimConfig::default()
    };
    let mut state = SimState::new(&config);
    let no_actions = BTreeMap::new();

    println!("time_s  vehicles  zone_density_veh_per_m  zone_mean_speed_mps  lane_changes");
    for step_index in 0..config.episode_steps {
        step(&mut state, &no_actions, &config).expect("hv-only step cannot fail");
        if (step_index + 1) % 100 == 0 {
            let stats = segment_stats(&state, &config.road);
            println!(
                "{:>6.1}  {:>8}  {:>22.5}  {:>19.3}  {:>12}",
                (step_index + 1) as f64 * config.dt,
                state.vehicles.len(),
                stats.density,
                stats.mean_speed,
                state.counters.completed_lane_changes,
            );
        }
    }

    let c = &state.counters;
    println!(
        "\ninjected {} vehicles, {} exited, {} collisions, {} completed lane changes, {} spawn skips",
        c.injected, c.exited, c.collisions, c.completed_lane_changes, c.spawn_skips
    );
}
