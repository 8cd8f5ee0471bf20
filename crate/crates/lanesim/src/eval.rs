//! Greedy-policy evaluation, agent-density sweeps, and space-time binning of
//! traffic traces.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{derive_seed, ExperimentConfig};
use crate::dqn::greedy_action;
use crate::env::{
    observation_len, observe_with_stats, reward, AgentAction, EnvError, ACTION_COUNT,
};
use crate::nn::{DenseNet, NnError};
use crate::road::RoadSegment;
use crate::sim::{segment_stats, SimError, SimState};

// Stream offsets under the master seed, disjoint from the training streams.
const STREAM_EVAL: u64 = 1_000_000;
const STREAM_SWEEP: u64 = 2_000_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Checkpoint(#[from] NnError),
    #[error(
        "checkpoint architecture mismatch: network expects {net_in} inputs / {net_out} outputs, \
config requires {want_in} / {want_out}"
    )]
    ArchMismatch {
        net_in: usize,
        net_out: usize,
        want_in: usize,
        want_out: usize,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Headline metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub agent_fraction: f64,
    /// Pooled mean speed over evaluation-zone vehicle samples, m/s; free-flow
    /// v_max when the zone stayed empty.
    pub mean_speed: f64,
    /// Agent-involved collisions per 1000 completed agent lane changes;
    /// absent when no agent lane change completed.
    pub collision_rate_per_1k_lc: Option<f64>,
    /// Mean comfort component over agent steps; absent without agents.
    pub mean_comfort: Option<f64>,
    pub episodes: u32,
}

/// One (time, position, speed) sample per vehicle per step.
pub type TraceSample = (f64, f64, f64);

/// Regular grid of mean speeds over 10 s x 100 m cells; -1 marks an empty
/// cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub time_bin_s: f64,
    pub space_bin_m: f64,
    /// Absolute position where the first space bin starts, m.
    pub space_origin_m: f64,
    /// cells[time][space]
    pub cells: Vec<Vec<f64>>,
}

pub const EMPTY_CELL: f64 = -1.0;

/// Bin trace samples over the evaluation zone: 100 m space bins, 10 s time
/// bins, each cell the mean speed of its samples.
pub fn space_time_bins(
    trace: &[TraceSample],
    road: &RoadSegment,
    duration_s: f64,
) -> SpaceTimeGrid {
    let time_bin = 10.0;
    let space_bin = 100.0;
    let time_bins = ((duration_s / time_bin).ceil() as usize).max(1);
    let space_bins = ((road.eval_zone_length() / space_bin).ceil() as usize).max(1);

    let mut sums = vec![vec![0.0f64; space_bins]; time_bins];
    let mut counts = vec![vec![0u64; space_bins]; time_bins];
    for &(t, pos, speed) in trace {
        if pos < road.warmup_length || pos >= road.total_length || t < 0.0 || t >= duration_s {
            continue;
        }
        let ti = ((t / time_bin) as usize).min(time_bins - 1);
        let si = (((pos - road.warmup_length) / space_bin) as usize).min(space_bins - 1);
        sums[ti][si] += speed;
        counts[ti][si] += 1;
    }

    let cells = sums
        .into_iter()
        .zip(counts)
        .map(|(row_sum, row_count)| {
            row_sum
                .into_iter()
                .zip(row_count)
                .map(|(s, c)| if c == 0 { EMPTY_CELL } else { s / c as f64 })
                .collect()
        })
        .collect();
    SpaceTimeGrid {
        time_bin_s: time_bin,
        space_bin_m: space_bin,
        space_origin_m: road.warmup_length,
        cells,
    }
}

struct EvalAccumulator {
    zone_speed_sum: f64,
    zone_samples: u64,
    comfort_sum: f64,
    agent_steps: u64,
    agent_collisions: u64,
    agent_lane_changes: u64,
    trace: Vec<TraceSample>,
}

/// Verify a loaded network against the road geometry it will observe.
pub fn check_architecture(net: &DenseNet, road: &RoadSegment) -> Result<(), EvalError> {
    let want_in = observation_len(road.lane_count);
    if net.input_len() != want_in || net.output_len() != ACTION_COUNT {
        return Err(EvalError::ArchMismatch {
            net_in: net.input_len(),
            net_out: net.output_len(),
            want_in,
            want_out: ACTION_COUNT,
        });
    }
    Ok(())
}

/// Roll greedy-policy episodes and aggregate the evaluation metrics. The
/// seed stream is derived from the config's simulation seed.
pub fn eval_episodes(
    config: &ExperimentConfig,
    net: &DenseNet,
    episodes: u32,
    seed_stream: u64,
) -> Result<(EvalSummary, Vec<TraceSample>), EvalError> {
    config.sim.validate().map_err(EvalError::Config)?;
    check_architecture(net, &config.sim.road)?;
    let road = &config.sim.road;

    let mut acc = EvalAccumulator {
        zone_speed_sum: 0.0,
        zone_samples: 0,
        comfort_sum: 0.0,
        agent_steps: 0,
        agent_collisions: 0,
        agent_lane_changes: 0,
        trace: Vec::new(),
    };

    for episode in 0..episodes {
        let mut episode_cfg = config.sim.clone();
        episode_cfg.seed = derive_seed(config.sim.seed, seed_stream + episode as u64);
        let mut state = SimState::new(&episode_cfg);

        for step in 0..episode_cfg.episode_steps {
            let stats_before = segment_stats(&state, road);
            let agent_ids = state.live_agent_ids();
            let mut actions: BTreeMap<u64, AgentAction> = BTreeMap::new();
            let mut chosen: Vec<(u64, AgentAction)> = Vec::with_capacity(agent_ids.len());
            for &id in &agent_ids {
                let obs = observe_with_stats(&state, id, road, &config.env, &stats_before)?;
                let action = AgentAction::from_index(greedy_action(net, &obs)?).unwrap();
                actions.insert(id, action);
                chosen.push((id, action));
            }

            let state_before = state.clone();
            let events = crate::sim::step(&mut state, &actions, &episode_cfg)?;
            let stats_after = segment_stats(&state, road);

            for (id, action) in chosen {
                let breakdown = reward(
                    &state_before,
                    action,
                    &state,
                    id,
                    &events,
                    &stats_after,
                    road,
                    &config.env,
                )?;
                acc.comfort_sum += breakdown.r_c;
                acc.agent_steps += 1;
            }

            let time_s = (step + 1) as f64 * episode_cfg.dt;
            for v in &state.vehicles {
                acc.trace.push((time_s, v.lon_pos, v.lon_speed));
                if v.lon_pos >= road.warmup_length {
                    acc.zone_speed_sum += v.lon_speed;
                    acc.zone_samples += 1;
                }
            }
        }

        acc.agent_collisions += state.counters.agent_collisions;
        acc.agent_lane_changes += state.counters.completed_agent_lane_changes;
    }

    let mean_speed = if acc.zone_samples > 0 {
        acc.zone_speed_sum / acc.zone_samples as f64
    } else {
        road.v_max
    };
    let summary = EvalSummary {
        agent_fraction: config.sim.agent_fraction,
        mean_speed,
        collision_rate_per_1k_lc: (acc.agent_lane_changes > 0)
            .then(|| acc.agent_collisions as f64 * 1000.0 / acc.agent_lane_changes as f64),
        mean_comfort: (acc.agent_steps > 0).then(|| acc.comfort_sum / acc.agent_steps as f64),
        episodes,
    };
    Ok((summary, acc.trace))
}

/// Files produced by [`run_eval`].
#[derive(Debug, Clone)]
pub struct EvalOutputs {
    pub summary: EvalSummary,
    pub timeseries_path: PathBuf,
    pub spacetime_path: PathBuf,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Evaluate a checkpointed policy with greedy actions and write the
/// per-step timeseries and the space-time grid.
pub fn run_eval(
    config: &ExperimentConfig,
    net: &DenseNet,
    episodes: u32,
    out_dir: &Path,
) -> Result<EvalOutputs, EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let road = &config.sim.road;

    // the per-step timeseries needs its own pass bookkeeping, so re-run the
    // aggregation while streaming rows
    check_architecture(net, road)?;
    config.sim.validate().map_err(EvalError::Config)?;

    let timeseries_path = out_dir.join("timeseries.csv");
    let mut ts = BufWriter::new(File::create(&timeseries_path)?);
    writeln!(ts, "# seed = {}", config.sim.seed)?;
    writeln!(
        ts,
        "episode,step,sim_time_s,mean_speed_mps,live_vehicles,collisions_cum,\
lane_changes_cum,mean_reward,mean_r_e,mean_r_s,mean_r_c,mean_r_u,epsilon,loss"
    )?;

    let mut collisions_cum = 0u64;
    let mut lane_changes_cum = 0u64;
    let mut acc = EvalAccumulator {
        zone_speed_sum: 0.0,
        zone_samples: 0,
        comfort_sum: 0.0,
        agent_steps: 0,
        agent_collisions: 0,
        agent_lane_changes: 0,
        trace: Vec::new(),
    };

    for episode in 0..episodes {
        let mut episode_cfg = config.sim.clone();
        episode_cfg.seed = derive_seed(config.sim.seed, STREAM_EVAL + episode as u64);
        let mut state = SimState::new(&episode_cfg);
        let mut prev_collisions = 0u64;
        let mut prev_lane_changes = 0u64;

        for step in 0..episode_cfg.episode_steps {
            let stats_before = segment_stats(&state, road);
            let agent_ids = state.live_agent_ids();
            let mut actions: BTreeMap<u64, AgentAction> = BTreeMap::new();
            let mut chosen: Vec<(u64, AgentAction)> = Vec::with_capacity(agent_ids.len());
            for &id in &agent_ids {
                let obs = observe_with_stats(&state, id, road, &config.env, &stats_before)?;
                let action = AgentAction::from_index(greedy_action(net, &obs)?).unwrap();
                actions.insert(id, action);
                chosen.push((id, action));
            }

            let state_before = state.clone();
            let events = crate::sim::step(&mut state, &actions, &episode_cfg)?;
            let stats_after = segment_stats(&state, road);

            let mut sums = [0.0f64; 5];
            let agents_this_step = chosen.len() as u64;
            for (id, action) in chosen {
                let b = reward(
                    &state_before,
                    action,
                    &state,
                    id,
                    &events,
                    &stats_after,
                    road,
                    &config.env,
                )?;
                sums[0] += b.total;
                sums[1] += b.r_e;
                sums[2] += b.r_s;
                sums[3] += b.r_c;
                sums[4] += b.r_u;
                acc.comfort_sum += b.r_c;
                acc.agent_steps += 1;
            }

            collisions_cum += state.counters.collisions - prev_collisions;
            lane_changes_cum += state.counters.completed_lane_changes - prev_lane_changes;
            prev_collisions = state.counters.collisions;
            prev_lane_changes = state.counters.completed_lane_changes;

            let time_s = (step + 1) as f64 * episode_cfg.dt;
            for v in &state.vehicles {
                acc.trace.push((time_s, v.lon_pos, v.lon_speed));
                if v.lon_pos >= road.warmup_length {
                    acc.zone_speed_sum += v.lon_speed;
                    acc.zone_samples += 1;
                }
            }

            let mean = |s: f64| (agents_this_step > 0).then(|| s / agents_this_step as f64);
            writeln!(
                ts,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},",
                episode,
                step + 1,
                time_s,
                stats_after.mean_speed,
                state.vehicles.len(),
                collisions_cum,
                lane_changes_cum,
                fmt_opt(mean(sums[0])),
                fmt_opt(mean(sums[1])),
                fmt_opt(mean(sums[2])),
                fmt_opt(mean(sums[3])),
                fmt_opt(mean(sums[4])),
                0.0,
            )?;
        }

        acc.agent_collisions += state.counters.agent_collisions;
        acc.agent_lane_changes += state.counters.completed_agent_lane_changes;
    }
    ts.flush()?;

    let duration = config.sim.episode_steps as f64 * config.sim.dt;
    let grid = space_time_bins(&acc.trace, road, duration);
    let spacetime_path = out_dir.join("spacetime.csv");
    let mut st = BufWriter::new(File::create(&spacetime_path)?);
    writeln!(st, "# seed = {}", config.sim.seed)?;
    writeln!(st, "time_bin_s,space_bin_m,mean_speed_mps")?;
    for (ti, row) in grid.cells.iter().enumerate() {
        for (si, &speed) in row.iter().enumerate() {
            writeln!(
                st,
                "{},{},{}",
                ti as f64 * grid.time_bin_s,
                grid.space_origin_m + si as f64 * grid.space_bin_m,
                speed
            )?;
        }
    }
    st.flush()?;

    let mean_speed = if acc.zone_samples > 0 {
        acc.zone_speed_sum / acc.zone_samples as f64
    } else {
        road.v_max
    };
    let summary = EvalSummary {
        agent_fraction: config.sim.agent_fraction,
        mean_speed,
        collision_rate_per_1k_lc: (acc.agent_lane_changes > 0)
            .then(|| acc.agent_collisions as f64 * 1000.0 / acc.agent_lane_changes as f64),
        mean_comfort: (acc.agent_steps > 0).then(|| acc.comfort_sum / acc.agent_steps as f64),
        episodes,
    };
    Ok(EvalOutputs {
        summary,
        timeseries_path,
        spacetime_path,
    })
}

/// Evaluate the policy at several agent fractions, one summary row per
/// fraction. Each point runs on its own sub-seed.
pub fn run_density_sweep(
    config: &ExperimentConfig,
    net: &DenseNet,
    fractions: &[f64],
    episodes: u32,
    out_dir: &Path,
) -> Result<(Vec<EvalSummary>, PathBuf), EvalError> {
    if fractions.is_empty() {
        return Err(EvalError::Config(
            "sweep needs at least one fraction".into(),
        ));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(EvalError::Config("fractions must lie in [0, 1]".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut summaries = Vec::with_capacity(fractions.len());
    for (index, &fraction) in fractions.iter().enumerate() {
        let mut point = config.clone();
        point.sim.agent_fraction = fraction;
        let (summary, _) =
            eval_episodes(&point, net, episodes, STREAM_SWEEP + 10_000 * index as u64)?;
        summaries.push(summary);
    }

    let sweep_path = out_dir.join("sweep.csv");
    let mut out = BufWriter::new(File::create(&sweep_path)?);
    writeln!(out, "# seed = {}", config.sim.seed)?;
    writeln!(
        out,
        "agent_fraction,mean_speed_mps,collision_rate_per_1k_lc,mean_comfort,episodes"
    )?;
    for s in &summaries {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.agent_fraction,
            s.mean_speed,
            fmt_opt(s.collision_rate_per_1k_lc),
            fmt_opt(s.mean_comfort),
            s.episodes
        )?;
    }
    out.flush()?;
    Ok((summaries, sweep_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.sim.road.total_length = 800.0;
        cfg.sim.road.warmup_length = 200.0;
        cfg.sim.episode_steps = 100;
        cfg.trainer.hidden_layers = vec![8];
        cfg
    }

    fn net_for(cfg: &ExperimentConfig) -> DenseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        DenseNet::init(
            &cfg.trainer
                .layer_sizes(observation_len(cfg.sim.road.lane_count)),
            OptimizerConfig::default(),
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn empty_trace_grid_is_all_sentinel() {
        let road = RoadSegment::default();
        let grid = space_time_bins(&[], &road, 300.0);
        assert_eq!(grid.cells.len(), 30);
        assert_eq!(grid.cells[0].len(), 30);
        assert!(grid.cells.iter().flatten().all(|&c| c == EMPTY_CELL));
    }

    #[test]
    fn constant_speed_vehicle_marks_its_cells() {
        let road = RoadSegment::default();
        // one vehicle crossing the zone at a constant 20 m/s
        let mut trace = Vec::new();
        let mut pos = road.warmup_length;
        let mut t = 0.0;
        while pos < road.total_length && t < 300.0 {
            trace.push((t, pos, 20.0));
            t += 0.1;
            pos += 2.0;
        }
        let grid = space_time_bins(&trace, &road, 300.0);
        let mut touched = 0;
        for row in &grid.cells {
            for &cell in row {
                if cell != EMPTY_CELL {
                    assert!((cell - 20.0).abs() < 1e-9);
                    touched += 1;
                }
            }
        }
        assert!(touched > 10);
    }

    #[test]
    fn slowdown_beyond_position_shows_in_bins() {
        let road = RoadSegment::default();
        let mut trace = Vec::new();
        for k in 0..2000 {
            let t = k as f64 * 0.1;
            let pos = 600.0 + (k as f64 * 1.5) % 2800.0;
            let speed = if pos >= 1500.0 { 8.0 } else { 28.0 };
            trace.push((t, pos, speed));
        }
        let grid = space_time_bins(&trace, &road, 200.0);
        let boundary_bin = ((1500.0 - road.warmup_length) / 100.0) as usize;
        let upstream: Vec<f64> = grid
            .cells
            .iter()
            .flat_map(|row| row[..boundary_bin].iter().copied())
            .filter(|&c| c != EMPTY_CELL)
            .collect();
        let downstream: Vec<f64> = grid
            .cells
            .iter()
            .flat_map(|row| row[boundary_bin..].iter().copied())
            .filter(|&c| c != EMPTY_CELL)
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&downstream) < mean(&upstream));
    }

    #[test]
    fn hv_only_eval_has_absent_agent_metrics() {
        let mut cfg = small_config();
        cfg.sim.agent_fraction = 0.0;
        let net = net_for(&cfg);
        let (summary, trace) = eval_episodes(&cfg, &net, 2, STREAM_EVAL).unwrap();
        assert_eq!(summary.mean_comfort, None);
        assert_eq!(summary.collision_rate_per_1k_lc, None);
        assert!(!trace.is_empty());
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = small_config();
        let net = net_for(&cfg);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_eval(&cfg, &net, 2, dir_a.path()).unwrap();
        let b = run_eval(&cfg, &net, 2, dir_b.path()).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(
            std::fs::read(&a.timeseries_path).unwrap(),
            std::fs::read(&b.timeseries_path).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.spacetime_path).unwrap(),
            std::fs::read(&b.spacetime_path).unwrap()
        );
    }

    #[test]
    fn architecture_mismatch_is_reported() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wrong = DenseNet::init(&[10, 4, 5], OptimizerConfig::default(), &mut rng).unwrap();
        assert!(matches!(
            eval_episodes(&cfg, &wrong, 1, 0),
            Err(EvalError::ArchMismatch { .. })
        ));
    }

    #[test]
    fn sweep_writes_one_row_per_fraction() {
        let mut cfg = small_config();
        cfg.sim.episode_steps = 50;
        let net = net_for(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let (summaries, path) = run_density_sweep(&cfg, &net, &[0.0, 0.5], 1, dir.path()).unwrap();
        assert_eq!(summaries.len(), 2);
        assert_eq!(summaries[0].agent_fraction, 0.0);
        assert_eq!(summaries[1].agent_fraction, 0.5);
        let text = std::fs::read_to_string(path).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 4); // comment + header + 2 rows
        assert!(rows[2].starts_with("0,"));
        assert!(rows[3].starts_with("0.5,"));
    }

    #[test]
    fn sweep_rejects_bad_fractions() {
        let cfg = small_config();
        let net = net_for(&cfg);
        let dir = tempfile::tempdir().unwrap();
        assert!(run_density_sweep(&cfg, &net, &[], 1, dir.path()).is_err());
        assert!(run_density_sweep(&cfg, &net, &[1.5], 1, dir.path()).is_err());
    }
}
