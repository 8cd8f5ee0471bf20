//! Experiment configuration: a flat `key = value` text format covering
//! every tunable default, with strict unknown-key rejection and a
//! round-trip-exact serializer.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::dqn::TrainerConfig;
use crate::env::EnvConfig;
use crate::hv::{DriverProfile, IdmParams};
use crate::nn::OptimizerAlgo;
use crate::road::ACCEL_LIMIT;
use crate::sim::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for key '{key}'")]
    BadValue { key: String, value: String },
    #[error("malformed line {0}: expected 'key = value'")]
    Malformed(usize),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Deterministic sub-seed derivation: one splitmix64 scramble of the master
/// seed offset by a stream index. Stream indices are documented where they
/// are used (network init, behavior policy, per-episode simulations, eval
/// runs, sweep points).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The full experiment setup assembled from the flat key space. Missing keys
/// take the documented defaults; unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    /// Base car-following parameters applied to every HV profile.
    pub idm: IdmParams,
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
            })
        })
        .collect()
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
            })
        })
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut hv_body_lengths: Vec<f64> =
            cfg.sim.hv_profiles.iter().map(|p| p.body_length).collect();
        let mut hv_sigmas: Vec<f64> = cfg.sim.hv_profiles.iter().map(|p| p.sigma).collect();

        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed(lineno + 1));
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value, &mut hv_body_lengths, &mut hv_sigmas)?;
        }

        if hv_body_lengths.len() != hv_sigmas.len() || hv_body_lengths.is_empty() {
            return Err(ConfigError::Invalid(
                "sim.hv_body_lengths and sim.hv_sigmas must be non-empty and equally long".into(),
            ));
        }
        cfg.sim.hv_profiles = hv_body_lengths
            .iter()
            .zip(&hv_sigmas)
            .map(|(&body_length, &sigma)| DriverProfile {
                body_length,
                sigma,
                idm: cfg.idm.clone(),
            })
            .collect();
        cfg.env.dt = cfg.sim.dt;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(
        &mut self,
        key: &str,
        value: &str,
        hv_body_lengths: &mut Vec<f64>,
        hv_sigmas: &mut Vec<f64>,
    ) -> Result<(), ConfigError> {
        match key {
            "road.total_length" => self.sim.road.total_length = parse_scalar(key, value)?,
            "road.warmup_length" => self.sim.road.warmup_length = parse_scalar(key, value)?,
            "road.lane_count" => self.sim.road.lane_count = parse_scalar(key, value)?,
            "road.lane_width" => self.sim.road.lane_width = parse_scalar(key, value)?,
            "road.v_max" => self.sim.road.v_max = parse_scalar(key, value)?,

            "sim.dt" => self.sim.dt = parse_scalar(key, value)?,
            "sim.injection_rate" => self.sim.injection_rate = parse_scalar(key, value)?,
            "sim.agent_fraction" => self.sim.agent_fraction = parse_scalar(key, value)?,
            "sim.injection_speed" => self.sim.injection_speed = parse_scalar(key, value)?,
            "sim.episode_steps" => self.sim.episode_steps = parse_scalar(key, value)?,
            "sim.seed" => self.sim.seed = parse_scalar(key, value)?,
            "sim.maneuver_duration" => self.sim.maneuver_duration = parse_scalar(key, value)?,
            "sim.hv_lane_change_interval" => {
                self.sim.hv_lane_change_interval = parse_scalar(key, value)?
            }
            "sim.av_body_length" => self.sim.av_body_length = parse_scalar(key, value)?,
            "sim.bootstrap_agents" => self.sim.bootstrap_agents = parse_scalar(key, value)?,
            "sim.hv_body_lengths" => *hv_body_lengths = parse_list(key, value)?,
            "sim.hv_sigmas" => *hv_sigmas = parse_list(key, value)?,
            "sim.hv_v0_factor_min" => self.sim.hv_v0_factor_range.0 = parse_scalar(key, value)?,
            "sim.hv_v0_factor_max" => self.sim.hv_v0_factor_range.1 = parse_scalar(key, value)?,

            "idm.time_headway" => self.idm.time_headway = parse_scalar(key, value)?,
            "idm.a_max" => self.idm.a_max = parse_scalar(key, value)?,
            "idm.b_comfort" => self.idm.b_comfort = parse_scalar(key, value)?,
            "idm.s0" => self.idm.s0 = parse_scalar(key, value)?,
            "idm.delta" => self.idm.delta = parse_scalar(key, value)?,

            "mobil.politeness" => self.sim.mobil.politeness = parse_scalar(key, value)?,
            "mobil.accel_threshold" => self.sim.mobil.accel_threshold = parse_scalar(key, value)?,
            "mobil.safe_decel" => self.sim.mobil.safe_decel = parse_scalar(key, value)?,

            "reward.w1" => self.env.weights.w1 = parse_scalar(key, value)?,
            "reward.w2" => self.env.weights.w2 = parse_scalar(key, value)?,
            "reward.w3" => self.env.weights.w3 = parse_scalar(key, value)?,
            "reward.w4" => self.env.weights.w4 = parse_scalar(key, value)?,
            "reward.v_min" => self.sim.road.v_min = parse_scalar(key, value)?,
            "reward.t_min_gap" => self.env.t_min_gap = parse_scalar(key, value)?,
            "reward.t_lat" => self.env.t_lat = parse_scalar(key, value)?,
            "reward.comfort_literal" => self.env.comfort_literal = parse_scalar(key, value)?,
            "reward.lon_safety_every_step" => {
                self.env.lon_safety_every_step = parse_scalar(key, value)?
            }
            "reward.lat_safety_every_step" => {
                self.env.lat_safety_every_step = parse_scalar(key, value)?
            }

            "trainer.episodes" => self.trainer.episodes = parse_scalar(key, value)?,
            "trainer.gamma" => self.trainer.gamma = parse_scalar(key, value)?,
            "trainer.minibatch" => self.trainer.minibatch = parse_scalar(key, value)?,
            "trainer.buffer_capacity" => self.trainer.buffer_capacity = parse_scalar(key, value)?,
            "trainer.eps_start" => self.trainer.eps_start = parse_scalar(key, value)?,
            "trainer.eps_end" => self.trainer.eps_end = parse_scalar(key, value)?,
            "trainer.eps_decay" => self.trainer.eps_decay = parse_scalar(key, value)?,
            "trainer.learning_start" => self.trainer.learning_start = parse_scalar(key, value)?,
            "trainer.train_interval" => self.trainer.train_interval = parse_scalar(key, value)?,
            "trainer.target_update_interval" => {
                self.trainer.target_update_interval = parse_scalar(key, value)?
            }
            "trainer.checkpoint_interval" => {
                self.trainer.checkpoint_interval = parse_scalar(key, value)?
            }
            "trainer.seed" => self.trainer.seed = parse_scalar(key, value)?,
            "trainer.hidden_layers" => self.trainer.hidden_layers = parse_usize_list(key, value)?,
            "trainer.optimizer" => {
                self.trainer.optimizer.algo = match value {
                    "adam" => OptimizerAlgo::Adam,
                    "sgd" => OptimizerAlgo::Sgd,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "trainer.learning_rate" => {
                self.trainer.optimizer.learning_rate = parse_scalar(key, value)?
            }
            "trainer.adam_beta1" => self.trainer.optimizer.beta1 = parse_scalar(key, value)?,
            "trainer.adam_beta2" => self.trainer.optimizer.beta2 = parse_scalar(key, value)?,
            "trainer.adam_epsilon" => self.trainer.optimizer.epsilon = parse_scalar(key, value)?,

            "normalization.density" => self.env.normalization.density = parse_scalar(key, value)?,
            "normalization.lat_speed" => {
                self.env.normalization.lat_speed = parse_scalar(key, value)?
            }
            "normalization.lane_count" => {
                self.env.normalization.lane_count = parse_scalar(key, value)?
            }

            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate().map_err(ConfigError::Invalid)?;
        self.trainer.validate().map_err(ConfigError::Invalid)?;
        if self.idm.a_max <= 0.0 || self.idm.a_max > ACCEL_LIMIT {
            return Err(ConfigError::Invalid(format!(
                "idm.a_max must lie in (0, {ACCEL_LIMIT}]"
            )));
        }
        if self.idm.time_headway <= 0.0
            || self.idm.b_comfort <= 0.0
            || self.idm.s0 <= 0.0
            || self.idm.delta <= 0.0
        {
            return Err(ConfigError::Invalid(
                "idm parameters must be positive".into(),
            ));
        }
        if self.sim.mobil.safe_decel <= 0.0 {
            return Err(ConfigError::Invalid(
                "mobil.safe_decel must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.sim.mobil.politeness) {
            return Err(ConfigError::Invalid(
                "mobil.politeness must lie in [0, 1]".into(),
            ));
        }
        let (lo, hi) = self.sim.hv_v0_factor_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(ConfigError::Invalid(
                "hv v0 factor range must satisfy 0 < min <= max".into(),
            ));
        }
        if self
            .sim
            .hv_profiles
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p.sigma))
        {
            return Err(ConfigError::Invalid("hv sigmas must lie in [0, 1]".into()));
        }
        if self.env.t_min_gap <= 0.0 || self.env.t_lat <= 0.0 {
            return Err(ConfigError::Invalid(
                "safety thresholds must be positive".into(),
            ));
        }
        if self.env.normalization.density <= 0.0
            || self.env.normalization.lat_speed <= 0.0
            || self.env.normalization.lane_count <= 0.0
        {
            return Err(ConfigError::Invalid(
                "normalization divisors must be positive".into(),
            ));
        }
        if self.trainer.optimizer.learning_rate < 0.0 {
            return Err(ConfigError::Invalid(
                "learning rate must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Every documented key exactly once, with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.sim;
        let e = &self.env;
        let t = &self.trainer;
        let i = &self.idm;
        let opt = &t.optimizer;
        vec![
            ("road.total_length", s.road.total_length.to_string()),
            ("road.warmup_length", s.road.warmup_length.to_string()),
            ("road.lane_count", s.road.lane_count.to_string()),
            ("road.lane_width", s.road.lane_width.to_string()),
            ("road.v_max", s.road.v_max.to_string()),
            ("sim.dt", s.dt.to_string()),
            ("sim.injection_rate", s.injection_rate.to_string()),
            ("sim.agent_fraction", s.agent_fraction.to_string()),
            ("sim.injection_speed", s.injection_speed.to_string()),
            ("sim.episode_steps", s.episode_steps.to_string()),
            ("sim.seed", s.seed.to_string()),
            ("sim.maneuver_duration", s.maneuver_duration.to_string()),
            (
                "sim.hv_lane_change_interval",
                s.hv_lane_change_interval.to_string(),
            ),
            ("sim.av_body_length", s.av_body_length.to_string()),
            ("sim.bootstrap_agents", s.bootstrap_agents.to_string()),
            (
                "sim.hv_body_lengths",
                join(
                    &s.hv_profiles
                        .iter()
                        .map(|p| p.body_length)
                        .collect::<Vec<_>>(),
                ),
            ),
            (
                "sim.hv_sigmas",
                join(&s.hv_profiles.iter().map(|p| p.sigma).collect::<Vec<_>>()),
            ),
            ("sim.hv_v0_factor_min", s.hv_v0_factor_range.0.to_string()),
            ("sim.hv_v0_factor_max", s.hv_v0_factor_range.1.to_string()),
            ("idm.time_headway", i.time_headway.to_string()),
            ("idm.a_max", i.a_max.to_string()),
            ("idm.b_comfort", i.b_comfort.to_string()),
            ("idm.s0", i.s0.to_string()),
            ("idm.delta", i.delta.to_string()),
            ("mobil.politeness", s.mobil.politeness.to_string()),
            ("mobil.accel_threshold", s.mobil.accel_threshold.to_string()),
            ("mobil.safe_decel", s.mobil.safe_decel.to_string()),
            ("reward.w1", e.weights.w1.to_string()),
            ("reward.w2", e.weights.w2.to_string()),
            ("reward.w3", e.weights.w3.to_string()),
            ("reward.w4", e.weights.w4.to_string()),
            ("reward.v_min", s.road.v_min.to_string()),
            ("reward.t_min_gap", e.t_min_gap.to_string()),
            ("reward.t_lat", e.t_lat.to_string()),
            ("reward.comfort_literal", e.comfort_literal.to_string()),
            (
                "reward.lon_safety_every_step",
                e.lon_safety_every_step.to_string(),
            ),
            (
                "reward.lat_safety_every_step",
                e.lat_safety_every_step.to_string(),
            ),
            ("trainer.episodes", t.episodes.to_string()),
            ("trainer.gamma", t.gamma.to_string()),
            ("trainer.minibatch", t.minibatch.to_string()),
            ("trainer.buffer_capacity", t.buffer_capacity.to_string()),
            ("trainer.eps_start", t.eps_start.to_string()),
            ("trainer.eps_end", t.eps_end.to_string()),
            ("trainer.eps_decay", t.eps_decay.to_string()),
            ("trainer.learning_start", t.learning_start.to_string()),
            ("trainer.train_interval", t.train_interval.to_string()),
            (
                "trainer.target_update_interval",
                t.target_update_interval.to_string(),
            ),
            (
                "trainer.checkpoint_interval",
                t.checkpoint_interval.to_string(),
            ),
            ("trainer.seed", t.seed.to_string()),
            ("trainer.hidden_layers", join(&t.hidden_layers)),
            (
                "trainer.optimizer",
                match opt.algo {
                    OptimizerAlgo::Adam => "adam".to_string(),
                    OptimizerAlgo::Sgd => "sgd".to_string(),
                },
            ),
            ("trainer.learning_rate", opt.learning_rate.to_string()),
            ("trainer.adam_beta1", opt.beta1.to_string()),
            ("trainer.adam_beta2", opt.beta2.to_string()),
            ("trainer.adam_epsilon", opt.epsilon.to_string()),
            ("normalization.density", e.normalization.density.to_string()),
            (
                "normalization.lat_speed",
                e.normalization.lat_speed.to_string(),
            ),
            (
                "normalization.lane_count",
                e.normalization.lane_count.to_string(),
            ),
        ]
    }

    /// Render the full key space; parsing the result reproduces the config
    /// exactly.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let prefix = key.split('.').next().unwrap();
            if prefix != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {prefix}");
                section = prefix;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.serialize();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn every_entry_key_is_unique_and_applicable() {
        let cfg = ExperimentConfig::default();
        let entries = cfg.entries();
        let mut keys: Vec<&str> = entries.iter().map(|(k, _)| *k).collect();
        let total = keys.len();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), total, "duplicate keys in the documented set");
    }

    #[test]
    fn non_default_values_round_trip() {
        let text = "\
# overrides
road.lane_count = 3
road.v_max = 30
reward.v_min = 15
sim.agent_fraction = 0.4
sim.hv_body_lengths = 4,6
sim.hv_sigmas = 0.1,0.2
trainer.hidden_layers = 16,16
trainer.optimizer = sgd
reward.comfort_literal = true
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.sim.road.lane_count, 3);
        assert_eq!(cfg.sim.road.v_min, 15.0);
        assert_eq!(cfg.sim.hv_profiles.len(), 2);
        assert_eq!(cfg.sim.hv_profiles[1].body_length, 6.0);
        assert_eq!(cfg.trainer.hidden_layers, vec![16, 16]);
        assert_eq!(cfg.trainer.optimizer.algo, OptimizerAlgo::Sgd);
        assert!(cfg.env.comfort_literal);

        let reparsed = ExperimentConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("road.curvature = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "road.curvature"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = ExperimentConfig::parse("sim.dt = fast\n").unwrap_err();
        match err {
            ConfigError::BadValue { key, value } => {
                assert_eq!(key, "sim.dt");
                assert_eq!(value, "fast");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = ExperimentConfig::parse("road.lane_count 5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed(1)));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::parse("\n# hello\nsim.seed = 9 # inline\n\n").unwrap();
        assert_eq!(cfg.sim.seed, 9);
    }

    #[test]
    fn invariant_violations_fail_validation() {
        assert!(ExperimentConfig::parse("road.lane_count = 1\n").is_err());
        assert!(ExperimentConfig::parse("sim.dt = 0\n").is_err());
        assert!(ExperimentConfig::parse("trainer.gamma = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("idm.a_max = 3.0\n").is_err());
        // v_min must stay below v_max
        assert!(ExperimentConfig::parse("reward.v_min = 40\n").is_err());
    }

    #[test]
    fn hv_lists_must_align() {
        let err = ExperimentConfig::parse("sim.hv_body_lengths = 4,5,6\nsim.hv_sigmas = 0.1\n")
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn env_dt_follows_sim_dt() {
        let cfg = ExperimentConfig::parse("sim.dt = 0.05\n").unwrap();
        assert_eq!(cfg.env.dt, 0.05);
    }

    #[test]
    fn derive_seed_is_stable_and_spreads() {
        assert_eq!(derive_seed(42, 0), derive_seed(42, 0));
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }
}
