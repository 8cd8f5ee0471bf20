//! Shared-parameter multi-agent DQN: one online network and one shared
//! replay buffer serve every agent; a delayed target network provides
//! bootstrap values, and behavior is epsilon-greedy.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::derive_seed;
use crate::env::{
    observe_with_stats, reward, AgentAction, EnvConfig, EnvError, Observation, ACTION_COUNT,
};
use crate::nn::{DenseNet, NnError, OptimizerConfig, TrainSample};
use crate::sim::{segment_stats, SimConfig, SimError, SimState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output directory {path} is not writable: {source}")]
    OutputDir {
        path: String,
        source: std::io::Error,
    },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_observation: Vec<f32>,
    pub terminal: bool,
}

/// FIFO ring of transitions shared by all agents.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: VecDeque<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            storage: VecDeque::with_capacity(capacity),
            capacity,
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(t.reward.is_finite());
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes so far, including ones that evicted an old record.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n)
            .map(|_| &self.storage[rng.random_range(0..self.storage.len())])
            .collect()
    }
}

/// Training schedule and learning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub episodes: u32,
    pub gamma: f64,
    pub minibatch: usize,
    pub buffer_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay: f64,
    /// Minimum buffer fill before gradient updates begin.
    pub learning_start: usize,
    /// Gradient update every this many simulation steps.
    pub train_interval: u32,
    /// Target-network sync every this many episodes.
    pub target_update_interval: u32,
    /// Periodic checkpoint cadence in episodes.
    pub checkpoint_interval: u32,
    /// Master seed for network init, the behavior policy, and per-episode
    /// simulation streams.
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            episodes: 500,
            gamma: 0.99,
            minibatch: 32,
            buffer_capacity: 400_000,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_decay: 0.99985,
            learning_start: 5000,
            train_interval: 10,
            target_update_interval: 10,
            checkpoint_interval: 100,
            seed: 42,
            hidden_layers: vec![32, 64, 64, 512],
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("gamma must lie in (0, 1]".into());
        }
        if self.eps_end > self.eps_start {
            return Err("eps_end must not exceed eps_start".into());
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err("epsilon bounds must lie in [0, 1]".into());
        }
        if !(self.eps_decay > 0.0 && self.eps_decay <= 1.0) {
            return Err("eps_decay must lie in (0, 1] so epsilon never increases".into());
        }
        if self.minibatch == 0 || self.minibatch > self.learning_start {
            return Err("require 0 < minibatch <= learning_start".into());
        }
        if self.buffer_capacity == 0 {
            return Err("buffer capacity must be positive".into());
        }
        if self.train_interval == 0 || self.target_update_interval == 0 {
            return Err("intervals must be positive".into());
        }
        if self.checkpoint_interval == 0 {
            return Err("checkpoint interval must be positive".into());
        }
        Ok(())
    }

    /// Full topology for the given observation length.
    pub fn layer_sizes(&self, obs_len: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_layers.len() + 2);
        sizes.push(obs_len);
        sizes.extend_from_slice(&self.hidden_layers);
        sizes.push(ACTION_COUNT);
        sizes
    }
}

/// Pure argmax over the network's q-values; ties break toward the lowest
/// index.
pub fn greedy_action(net: &DenseNet, observation: &Observation) -> Result<usize, NnError> {
    let q = net.forward(observation.as_slice())?;
    let mut best = 0usize;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Epsilon-greedy action selection.
pub fn select_action<R: Rng>(
    net: &DenseNet,
    observation: &Observation,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, NnError> {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    let explore: f64 = rng.random();
    if explore < epsilon {
        return Ok(rng.random_range(0..net.output_len()));
    }
    greedy_action(net, observation)
}

/// Bootstrap targets: y = r for terminal transitions, otherwise
/// y = r + gamma * max_a' Q_target(s', a').
pub fn td_targets(
    batch: &[&Transition],
    target_net: &DenseNet,
    gamma: f64,
) -> Result<Vec<f64>, NnError> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                Ok(t.reward as f64)
            } else {
                let q = target_net.forward(&t.next_observation)?;
                let max_q = q
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, |m, v| m.max(v as f64));
                Ok(t.reward as f64 + gamma * max_q)
            }
        })
        .collect()
}

/// Hard-copy the online parameters into the target network.
pub fn sync_target(online: &DenseNet, target: &mut DenseNet) -> Result<(), NnError> {
    target.copy_params_from(online)
}

/// Per-episode aggregates for the metrics log.
#[derive(Debug, Clone)]
pub struct EpisodeStats {
    pub steps: u32,
    pub mean_speed: f64,
    pub mean_live_vehicles: f64,
    pub collisions: u64,
    pub lane_changes: u64,
    pub agent_steps: u64,
    pub mean_reward: Option<f64>,
    pub mean_r_e: Option<f64>,
    pub mean_r_s: Option<f64>,
    pub mean_r_c: Option<f64>,
    pub mean_r_u: Option<f64>,
    pub mean_loss: Option<f64>,
    pub updates: u32,
}

/// Owns the single online network all agents act from, the target network,
/// the shared replay buffer, and the exploration schedule.
pub struct Trainer {
    pub config: TrainerConfig,
    online: DenseNet,
    target: DenseNet,
    buffer: ReplayBuffer,
    epsilon: f64,
    rng: ChaCha8Rng,
    episodes_done: u32,
    total_steps: u64,
}

// Stream indices under the master seed.
const STREAM_NET_INIT: u64 = 0;
const STREAM_BEHAVIOR: u64 = 1;
const STREAM_EPISODES: u64 = 2;

impl Trainer {
    pub fn new(config: TrainerConfig, obs_len: usize) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let sizes = config.layer_sizes(obs_len);
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_NET_INIT));
        let online = DenseNet::init(&sizes, config.optimizer.clone(), &mut init_rng)?;
        // initializing the target from the online weights equals a first sync
        let target = online.clone();
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_BEHAVIOR));
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        let epsilon = config.eps_start;
        Ok(Trainer {
            config,
            online,
            target,
            buffer,
            epsilon,
            rng,
            episodes_done: 0,
            total_steps: 0,
        })
    }

    pub fn online(&self) -> &DenseNet {
        &self.online
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn episodes_done(&self) -> u32 {
        self.episodes_done
    }

    pub fn push_transition(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One gradient update, gated on the warm-up fill. Decays epsilon once
    /// per performed update. Returns the mean minibatch loss, or None while
    /// the buffer is still below `learning_start`.
    pub fn train_step(&mut self) -> Result<Option<f64>, TrainError> {
        if self.buffer.len() < self.config.learning_start {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.minibatch, &mut self.rng);
        let targets = td_targets(&batch, &self.target, self.config.gamma)?;
        let samples: Vec<TrainSample> = batch
            .iter()
            .zip(&targets)
            .map(|(t, &target)| TrainSample {
                input: &t.observation,
                action: t.action,
                target,
            })
            .collect();
        let loss = self.online.backward_and_apply(&samples)?;
        self.epsilon = (self.epsilon * self.config.eps_decay).max(self.config.eps_end);
        Ok(Some(loss))
    }

    /// Roll one full episode: every live agent acts from the shared online
    /// network each step, transitions go to the shared buffer in agent-id
    /// order, and gradient updates run on the configured step cadence. The
    /// target network syncs on the episode cadence.
    pub fn run_episode(
        &mut self,
        sim_config: &SimConfig,
        env_config: &EnvConfig,
        episode_index: u32,
    ) -> Result<EpisodeStats, TrainError> {
        let road = &sim_config.road;
        let mut episode_cfg = sim_config.clone();
        episode_cfg.seed = derive_seed(self.config.seed, STREAM_EPISODES + episode_index as u64);
        let mut state = SimState::new(&episode_cfg);

        let obs_len = crate::env::observation_len(road.lane_count);
        let mut speed_sum = 0.0f64;
        let mut live_sum = 0.0f64;
        let mut reward_sums = [0.0f64; 5]; // total, r_e, r_s, r_c, r_u
        let mut agent_steps = 0u64;
        let mut loss_sum = 0.0f64;
        let mut updates = 0u32;

        for _ in 0..episode_cfg.episode_steps {
            let agent_ids = state.live_agent_ids();
            let stats_before = segment_stats(&state, road);

            let mut decisions: Vec<(u64, Observation, AgentAction)> =
                Vec::with_capacity(agent_ids.len());
            let mut actions: BTreeMap<u64, AgentAction> = BTreeMap::new();
            for &id in &agent_ids {
                let obs = observe_with_stats(&state, id, road, env_config, &stats_before)?;
                let action_idx = select_action(&self.online, &obs, self.epsilon, &mut self.rng)?;
                let action = AgentAction::from_index(action_idx).unwrap();
                actions.insert(id, action);
                decisions.push((id, obs, action));
            }

            let state_before = state.clone();
            let events = crate::sim::step(&mut state, &actions, &episode_cfg)?;
            let stats_after = segment_stats(&state, road);

            for (id, obs, action) in decisions {
                let breakdown = reward(
                    &state_before,
                    action,
                    &state,
                    id,
                    &events,
                    &stats_after,
                    road,
                    env_config,
                )?;
                let terminal = events.collided(id) || events.exits.contains(&id);
                let next_observation = if terminal {
                    vec![0.0f32; obs_len]
                } else {
                    observe_with_stats(&state, id, road, env_config, &stats_after)?.0
                };
                self.buffer.push(Transition {
                    observation: obs.0,
                    action: action.index(),
                    reward: breakdown.total as f32,
                    next_observation,
                    terminal,
                });
                reward_sums[0] += breakdown.total;
                reward_sums[1] += breakdown.r_e;
                reward_sums[2] += breakdown.r_s;
                reward_sums[3] += breakdown.r_c;
                reward_sums[4] += breakdown.r_u;
                agent_steps += 1;
            }

            self.total_steps += 1;
            if self
                .total_steps
                .is_multiple_of(self.config.train_interval as u64)
            {
                if let Some(loss) = self.train_step()? {
                    loss_sum += loss;
                    updates += 1;
                }
            }

            speed_sum += stats_after.mean_speed;
            live_sum += state.vehicles.len() as f64;
        }

        self.episodes_done += 1;
        if self
            .episodes_done
            .is_multiple_of(self.config.target_update_interval)
        {
            sync_target(&self.online, &mut self.target)?;
        }

        let steps = episode_cfg.episode_steps;
        let mean = |sum: f64| (agent_steps > 0).then(|| sum / agent_steps as f64);
        Ok(EpisodeStats {
            steps,
            mean_speed: speed_sum / steps as f64,
            mean_live_vehicles: live_sum / steps as f64,
            collisions: state.counters.collisions,
            lane_changes: state.counters.completed_lane_changes,
            agent_steps,
            mean_reward: mean(reward_sums[0]),
            mean_r_e: mean(reward_sums[1]),
            mean_r_s: mean(reward_sums[2]),
            mean_r_c: mean(reward_sums[3]),
            mean_r_u: mean(reward_sums[4]),
            mean_loss: (updates > 0).then(|| loss_sum / updates as f64),
            updates,
        })
    }
}

/// Result paths and per-episode aggregates of a training run.
#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub episodes: u32,
    pub final_epsilon: f64,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub episode_rewards: Vec<Option<f64>>,
    pub episode_mean_speeds: Vec<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Drive the full training loop: one metrics row per episode, periodic and
/// final checkpoints. Fails before any episode runs if the output directory
/// cannot be written.
pub fn run_training(
    sim_config: &SimConfig,
    env_config: &EnvConfig,
    trainer_config: &TrainerConfig,
    out_dir: &Path,
) -> Result<TrainingSummary, TrainError> {
    sim_config.validate().map_err(TrainError::Config)?;
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::OutputDir {
        path: out_dir.display().to_string(),
        source,
    })?;
    let metrics_path = out_dir.join("metrics.csv");
    let metrics_file = File::create(&metrics_path).map_err(|source| TrainError::OutputDir {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut metrics = BufWriter::new(metrics_file);
    writeln!(metrics, "# seed = {}", trainer_config.seed)?;
    writeln!(
        metrics,
        "episode,step,sim_time_s,mean_speed_mps,live_vehicles,collisions_cum,\
lane_changes_cum,mean_reward,mean_r_e,mean_r_s,mean_r_c,mean_r_u,epsilon,loss"
    )?;

    let obs_len = crate::env::observation_len(sim_config.road.lane_count);
    let mut trainer = Trainer::new(trainer_config.clone(), obs_len)?;
    trainer
        .online
        .save_checkpoint(out_dir.join("checkpoint_initial.bin"))?;

    let mut collisions_cum = 0u64;
    let mut lane_changes_cum = 0u64;
    let mut steps_cum = 0u64;
    let mut episode_rewards = Vec::with_capacity(trainer_config.episodes as usize);
    let mut episode_mean_speeds = Vec::with_capacity(trainer_config.episodes as usize);

    for episode in 0..trainer_config.episodes {
        let stats = trainer.run_episode(sim_config, env_config, episode)?;
        collisions_cum += stats.collisions;
        lane_changes_cum += stats.lane_changes;
        steps_cum += stats.steps as u64;
        episode_rewards.push(stats.mean_reward);
        episode_mean_speeds.push(stats.mean_speed);

        writeln!(
            metrics,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            episode,
            steps_cum,
            steps_cum as f64 * sim_config.dt,
            stats.mean_speed,
            stats.mean_live_vehicles,
            collisions_cum,
            lane_changes_cum,
            fmt_opt(stats.mean_reward),
            fmt_opt(stats.mean_r_e),
            fmt_opt(stats.mean_r_s),
            fmt_opt(stats.mean_r_c),
            fmt_opt(stats.mean_r_u),
            trainer.epsilon(),
            fmt_opt(stats.mean_loss),
        )?;

        if (episode + 1).is_multiple_of(trainer_config.checkpoint_interval) {
            trainer
                .online
                .save_checkpoint(out_dir.join(format!("checkpoint_ep{:04}.bin", episode + 1)))?;
        }
    }
    metrics.flush()?;

    let final_checkpoint = out_dir.join("checkpoint_final.bin");
    trainer.online.save_checkpoint(&final_checkpoint)?;

    Ok(TrainingSummary {
        episodes: trainer_config.episodes,
        final_epsilon: trainer.epsilon(),
        metrics_path,
        final_checkpoint,
        episode_rewards,
        episode_mean_speeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn obs(values: &[f32]) -> Observation {
        Observation(values.to_vec())
    }

    fn tiny_transition(v: f32, terminal: bool) -> Transition {
        Transition {
            observation: vec![v],
            action: 0,
            reward: v,
            next_observation: vec![v],
            terminal,
        }
    }

    fn test_net(sizes: &[usize], seed: u64) -> DenseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseNet::init(sizes, OptimizerConfig::default(), &mut rng).unwrap()
    }

    /// Single linear layer [2 -> 5] whose outputs equal its biases on a zero
    /// input.
    fn net_with_q(q: [f32; 5]) -> DenseNet {
        DenseNet::from_params(
            &[2, 5],
            &[vec![0.0; 10]],
            &[q.to_vec()],
            OptimizerConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn buffer_is_fifo_at_capacity() {
        let mut buffer = ReplayBuffer::new(3);
        for i in 0..4 {
            buffer.push(tiny_transition(i as f32, false));
        }
        assert_eq!(buffer.len(), 3);
        assert_eq!(buffer.inserted(), 4);
        let kept: Vec<f32> = (0..3).map(|i| buffer.get(i).unwrap().reward).collect();
        assert_eq!(kept, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn greedy_selection_and_tie_break() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n1 = net_with_q([0.1, 0.9, 0.2, 0.0, 0.0]);
        assert_eq!(
            select_action(&n1, &obs(&[0.0, 0.0]), 0.0, &mut rng).unwrap(),
            1
        );
        let n2 = net_with_q([0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(
            select_action(&n2, &obs(&[0.0, 0.0]), 0.0, &mut rng).unwrap(),
            0
        );
    }

    #[test]
    fn full_exploration_is_roughly_uniform() {
        let net = test_net(&[2, 5], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&net, &obs(&[0.1, 0.2]), 1.0, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / 5.0;
        let sigma = (draws as f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "count {c} deviates from uniform"
            );
        }
    }

    #[test]
    fn td_target_cases() {
        let net = test_net(&[1, 5], 3);
        let terminal = tiny_transition(-5.0, true);
        let ys = td_targets(&[&terminal], &net, 0.99).unwrap();
        assert_eq!(ys, vec![-5.0]);

        let live = tiny_transition(1.0, false);
        let q = net.forward(&live.next_observation).unwrap();
        let max_q = q.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let ys = td_targets(&[&live], &net, 0.99).unwrap();
        assert!((ys[0] - (1.0 + 0.99 * max_q)).abs() < 1e-9);

        let ys = td_targets(&[&live], &net, 0.0).unwrap();
        assert_eq!(ys, vec![1.0]);
    }

    #[test]
    fn direct_substitution_td_target() {
        // r = 1, gamma = 0.99, max q' = 2 -> 2.98
        let net = net_with_q([2.0, 0.0, 0.0, 0.0, 0.0]);
        let t = Transition {
            observation: vec![0.0, 0.0],
            action: 0,
            reward: 1.0,
            next_observation: vec![0.0, 0.0],
            terminal: false,
        };
        let ys = td_targets(&[&t], &net, 0.99).unwrap();
        assert!((ys[0] - 2.98).abs() < 1e-9);
    }

    #[test]
    fn sync_copies_and_isolates() {
        let online = test_net(&[4, 6, 5], 1);
        let mut target = test_net(&[4, 6, 5], 2);
        sync_target(&online, &mut target).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f32> = (0..4).map(|_| rng.random::<f32>()).collect();
            assert_eq!(online.forward(&x).unwrap(), target.forward(&x).unwrap());
        }

        // one online step leaves the target untouched
        let mut online = online;
        let target_before = target.to_bytes();
        let input = vec![0.2f32, -0.1, 0.4, 0.9];
        let batch = [TrainSample {
            input: &input,
            action: 1,
            target: 3.0,
        }];
        online.backward_and_apply(&batch).unwrap();
        assert_eq!(target.to_bytes(), target_before);

        let mut mismatched = test_net(&[4, 7, 5], 3);
        assert!(sync_target(&online, &mut mismatched).is_err());
    }

    #[test]
    fn trainer_initialization_equals_immediate_sync() {
        let trainer = Trainer::new(TrainerConfig::default(), 40).unwrap();
        assert_eq!(trainer.online().to_bytes(), trainer.target().to_bytes());
        assert_eq!(trainer.online().layer_sizes(), &[40, 32, 64, 64, 512, 5]);
    }

    #[test]
    fn train_step_skips_until_learning_start() {
        let cfg = TrainerConfig {
            learning_start: 50,
            minibatch: 8,
            ..TrainerConfig::default()
        };
        let mut trainer = Trainer::new(cfg, 4).unwrap();
        for i in 0..10 {
            trainer.push_transition(Transition {
                observation: vec![0.1; 4],
                action: i % 5,
                reward: 0.5,
                next_observation: vec![0.2; 4],
                terminal: false,
            });
        }
        let before = trainer.online().to_bytes();
        assert!(trainer.train_step().unwrap().is_none());
        assert_eq!(trainer.online().to_bytes(), before);
        assert_eq!(trainer.epsilon(), 1.0);

        for i in 0..40 {
            trainer.push_transition(Transition {
                observation: vec![0.1; 4],
                action: i % 5,
                reward: 0.5,
                next_observation: vec![0.2; 4],
                terminal: false,
            });
        }
        assert!(trainer.train_step().unwrap().is_some());
        assert!(trainer.epsilon() < 1.0);
    }

    #[test]
    fn epsilon_follows_closed_form() {
        let cfg = TrainerConfig {
            learning_start: 32,
            ..TrainerConfig::default()
        };
        let mut trainer = Trainer::new(cfg, 2).unwrap();
        for _ in 0..100 {
            trainer.push_transition(Transition {
                observation: vec![0.3, -0.4],
                action: 2,
                reward: 1.0,
                next_observation: vec![0.1, 0.0],
                terminal: false,
            });
        }
        for k in 1..=2000u32 {
            trainer.train_step().unwrap().unwrap();
            let expected = (0.99985f64.powi(k as i32)).max(0.1);
            assert!(
                (trainer.epsilon() - expected).abs() < 1e-9,
                "after {k} decays: {} vs {expected}",
                trainer.epsilon()
            );
        }
    }

    #[test]
    fn training_run_writes_outputs_and_is_deterministic() {
        let sim_config = SimConfig {
            road: crate::road::RoadSegment {
                total_length: 600.0,
                warmup_length: 100.0,
                ..Default::default()
            },
            episode_steps: 60,
            injection_rate: 7200.0,
            agent_fraction: 0.5,
            ..SimConfig::default()
        };
        let trainer_config = TrainerConfig {
            episodes: 2,
            learning_start: 32,
            hidden_layers: vec![8, 8],
            checkpoint_interval: 1,
            seed: 7,
            ..TrainerConfig::default()
        };
        let env_config = EnvConfig::default();

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_training(&sim_config, &env_config, &trainer_config, dir_a.path()).unwrap();
        let b = run_training(&sim_config, &env_config, &trainer_config, dir_b.path()).unwrap();

        let metrics_a = std::fs::read(&a.metrics_path).unwrap();
        let metrics_b = std::fs::read(&b.metrics_path).unwrap();
        assert_eq!(metrics_a, metrics_b);
        let ckpt_a = std::fs::read(&a.final_checkpoint).unwrap();
        let ckpt_b = std::fs::read(&b.final_checkpoint).unwrap();
        assert_eq!(ckpt_a, ckpt_b);

        let text = String::from_utf8(metrics_a).unwrap();
        assert!(text.starts_with("# seed = 7\n"));
        assert_eq!(text.lines().count(), 2 + 2); // comment + header + 2 episodes
    }

    #[test]
    fn zero_episode_run_emits_header_and_initial_checkpoint() {
        let sim_config = SimConfig::default();
        let trainer_config = TrainerConfig {
            episodes: 0,
            hidden_layers: vec![4],
            ..TrainerConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        run_training(
            &sim_config,
            &EnvConfig::default(),
            &trainer_config,
            dir.path(),
        )
        .unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 2); // comment + header only
        assert!(dir.path().join("checkpoint_initial.bin").exists());
        assert!(dir.path().join("checkpoint_final.bin").exists());
    }
}
