//! Agent-facing environment layer: observation building, action semantics,
//! and the four-part reward (efficiency, safety, comfort, lane-change
//! utility).

use thiserror::Error;

use crate::road::{RoadSegment, VehicleState, ACCEL_LIMIT, SPEED_CAP};
use crate::sim::{
    follower_in_lane, lane_membership, leader_in_lane, segment_stats, SegmentStats, SimState,
    StepEvents,
};

/// Sensing range around the ego vehicle, m.
pub const NEIGHBOR_RANGE: f64 = 100.0;

/// Largest jerk reachable in one step: full swing of the acceleration range
/// over one 0.1 s interval, (2.6 - (-2.6)) / 0.1.
pub const JERK_MAX: f64 = 52.0;

/// Number of neighbor slots in the observation.
pub const NEIGHBOR_SLOTS: usize = 3;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown agent id {0}")]
    UnknownAgent(u64),
}

/// The five discrete agent actions, in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentAction {
    Left,
    Right,
    Keep,
    Accelerate,
    Decelerate,
}

pub const ACTION_COUNT: usize = 5;

impl AgentAction {
    pub const ALL: [AgentAction; ACTION_COUNT] = [
        AgentAction::Left,
        AgentAction::Right,
        AgentAction::Keep,
        AgentAction::Accelerate,
        AgentAction::Decelerate,
    ];

    pub fn index(&self) -> usize {
        match self {
            AgentAction::Left => 0,
            AgentAction::Right => 1,
            AgentAction::Keep => 2,
            AgentAction::Accelerate => 3,
            AgentAction::Decelerate => 4,
        }
    }

    pub fn from_index(index: usize) -> Option<AgentAction> {
        Self::ALL.get(index).copied()
    }

    pub fn lane_change_direction(&self) -> Option<crate::road::LaneChangeDirection> {
        match self {
            AgentAction::Left => Some(crate::road::LaneChangeDirection::Left),
            AgentAction::Right => Some(crate::road::LaneChangeDirection::Right),
            _ => None,
        }
    }
}

/// Divisors used to squash raw quantities into the observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    /// Density divisor, veh/m.
    pub density: f64,
    /// Lateral speed divisor, m/s.
    pub lat_speed: f64,
    /// Lane-count divisor.
    pub lane_count: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            density: 0.15,
            lat_speed: 5.0,
            lane_count: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
        }
    }
}

/// Reward- and observation-related knobs shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Longitudinal safety threshold, m.
    pub t_min_gap: f64,
    /// Lateral-phase safety threshold, m.
    pub t_lat: f64,
    /// Action update interval, s; appears raw in the observation.
    pub dt: f64,
    /// Use the comfort formula exactly as printed (-da/jerk_max^2) instead
    /// of the squared-jerk form.
    pub comfort_literal: bool,
    /// Evaluate the longitudinal safety term every step, not only while a
    /// maneuver is active.
    pub lon_safety_every_step: bool,
    /// Also evaluate the lateral safety term when no maneuver is active,
    /// against both adjacent lanes.
    pub lat_safety_every_step: bool,
    pub weights: RewardWeights,
    pub normalization: Normalization,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            t_min_gap: 2.5,
            t_lat: 10.0,
            dt: 0.1,
            comfort_literal: false,
            lon_safety_every_step: true,
            lat_safety_every_step: false,
            weights: RewardWeights::default(),
            normalization: Normalization::default(),
        }
    }
}

/// Fixed-length normalized state vector: ego block (5), three nearest
/// neighbors within 100 m (3 x 6), global traffic block (7), and per-lane
/// speed/density pairs (2 x lane_count). 40 entries on the default 5-lane
/// road.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f32>);

impl Observation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

pub fn observation_len(lane_count: usize) -> usize {
    5 + NEIGHBOR_SLOTS * 6 + 7 + 2 * lane_count
}

/// Write-once buffer: in debug builds a mask verifies that every index is
/// written exactly once before the vector is released.
struct ObsWriter {
    buf: Vec<f32>,
    cursor: usize,
    #[cfg(debug_assertions)]
    mask: Vec<bool>,
}

impl ObsWriter {
    fn new(len: usize) -> Self {
        ObsWriter {
            buf: vec![0.0; len],
            cursor: 0,
            #[cfg(debug_assertions)]
            mask: vec![false; len],
        }
    }

    fn push(&mut self, value: f64) {
        debug_assert!(value.is_finite(), "non-finite observation entry");
        #[cfg(debug_assertions)]
        {
            assert!(!self.mask[self.cursor], "observation index written twice");
            self.mask[self.cursor] = true;
        }
        self.buf[self.cursor] = value as f32;
        self.cursor += 1;
    }

    fn finish(self) -> Vec<f32> {
        #[cfg(debug_assertions)]
        assert!(
            self.mask.iter().all(|&w| w),
            "observation index never written"
        );
        assert_eq!(self.cursor, self.buf.len());
        self.buf
    }
}

/// Build the observation for one agent. Pure in (state, agent, road, env).
pub fn observe(
    state: &SimState,
    agent_id: u64,
    road: &RoadSegment,
    env: &EnvConfig,
) -> Result<Observation, EnvError> {
    let stats = segment_stats(state, road);
    observe_with_stats(state, agent_id, road, env, &stats)
}

/// Same as [`observe`] with precomputed segment statistics, for callers that
/// build observations for many agents against one snapshot.
pub fn observe_with_stats(
    state: &SimState,
    agent_id: u64,
    road: &RoadSegment,
    env: &EnvConfig,
    stats: &SegmentStats,
) -> Result<Observation, EnvError> {
    let ego = state
        .vehicle(agent_id)
        .ok_or(EnvError::UnknownAgent(agent_id))?;
    let mut w = ObsWriter::new(observation_len(road.lane_count));
    let road_width = road.width();
    let norm = &env.normalization;

    // ego block
    w.push(ego.lon_pos / road.total_length);
    w.push(ego.lat_pos / road_width);
    w.push(ego.lon_speed / SPEED_CAP);
    w.push(ego.lat_speed / norm.lat_speed);
    w.push(ego.accel / ACCEL_LIMIT);

    // three nearest vehicles within range, by absolute longitudinal offset
    let mut neighbors: Vec<&VehicleState> = state
        .vehicles
        .iter()
        .filter(|v| v.id != ego.id && (v.lon_pos - ego.lon_pos).abs() <= NEIGHBOR_RANGE)
        .collect();
    neighbors.sort_by(|a, b| {
        let ka = ((a.lon_pos - ego.lon_pos).abs(), a.id);
        let kb = ((b.lon_pos - ego.lon_pos).abs(), b.id);
        ka.partial_cmp(&kb).unwrap()
    });
    for slot in 0..NEIGHBOR_SLOTS {
        match neighbors.get(slot) {
            Some(v) => {
                w.push((v.lon_pos - ego.lon_pos) / NEIGHBOR_RANGE);
                w.push((v.lat_pos - ego.lat_pos) / road_width);
                w.push(v.lon_speed / SPEED_CAP);
                w.push(v.lat_speed / norm.lat_speed);
                w.push(v.accel / ACCEL_LIMIT);
                w.push(v.sigma);
            }
            None => {
                for _ in 0..6 {
                    w.push(0.0);
                }
            }
        }
    }

    // global traffic block
    w.push(stats.density / norm.density);
    w.push(stats.mean_speed / SPEED_CAP);
    w.push(road.v_max / SPEED_CAP);
    w.push(road.lane_count as f64 / norm.lane_count);
    w.push(env.t_lat / NEIGHBOR_RANGE);
    w.push(env.t_min_gap / 10.0);
    w.push(env.dt);

    // per-lane block
    for lane in 0..road.lane_count {
        w.push(stats.lane_mean_speed[lane] / SPEED_CAP);
        w.push(stats.lane_density[lane] / norm.density);
    }

    Ok(Observation(w.finish()))
}

/// Per-step reward decomposition for one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub g_e: f64,
    pub l_e: f64,
    pub r_e: f64,
    pub l_lon: f64,
    pub l_lat: f64,
    pub l_col: f64,
    pub r_s: f64,
    pub r_c: f64,
    pub r_u: f64,
    pub weights: RewardWeights,
    pub total: f64,
}

/// One arm of the piecewise efficiency term, shared by the global and local
/// components: positive and growing above v_min, negative outside the
/// [v_min, v_max] band, proportional to the shortfall/excess.
pub fn efficiency_term(v: f64, road: &RoadSegment) -> f64 {
    if v > road.v_max {
        -(v - road.v_max) / road.v_max
    } else if v >= road.v_min {
        (v - road.v_min) / road.v_min
    } else {
        -(road.v_min - v) / road.v_min
    }
}

/// Efficiency reward: global term over the segment mean speed plus local
/// term over the ego speed.
pub fn efficiency_reward(v_e: f64, v_ego: f64, road: &RoadSegment) -> (f64, f64, f64) {
    let g_e = efficiency_term(v_e, road);
    let l_e = efficiency_term(v_ego, road);
    (g_e, l_e, g_e + l_e)
}

/// Shortfall penalty against a safety threshold: zero at or beyond the
/// threshold distance, linear below it, clamped at -1 so overlap geometry
/// cannot dominate the collision penalty.
pub fn safety_shortfall(distance: f64, threshold: f64) -> f64 {
    if distance <= threshold {
        ((distance - threshold) / threshold).clamp(-1.0, 0.0)
    } else {
        0.0
    }
}

/// Minimum bumper-to-bumper distance (negative on overlap) from the agent to
/// any vehicle counted in `lane`, looking both ways.
fn min_lane_distance(
    state: &SimState,
    agent: &VehicleState,
    lane: usize,
    road: &RoadSegment,
) -> Option<f64> {
    let ahead = leader_in_lane(&state.vehicles, agent, lane, road).map(|(_, gap)| gap);
    let behind = follower_in_lane(&state.vehicles, agent, lane, road).map(|(_, gap)| gap);
    match (ahead, behind) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}

/// Safety reward on the post-step state: longitudinal headway shortfall,
/// lateral clearance while changing lanes, and the collision penalty. Each
/// distance component is clamped at -1 so only a collision reaches -5.
pub fn safety_reward(
    state_after: &SimState,
    agent_id: u64,
    events: &StepEvents,
    road: &RoadSegment,
    env: &EnvConfig,
) -> (f64, f64, f64, f64) {
    let l_col = if events.collided(agent_id) { -5.0 } else { 0.0 };

    let Some(agent) = state_after.vehicle(agent_id) else {
        // removed this step (collision or exit): no gaps left to measure
        return (0.0, 0.0, l_col, l_col);
    };

    let maneuvering = agent.maneuver.is_some();

    let l_lon = if env.lon_safety_every_step || maneuvering {
        let d_long = lane_membership(agent, road)
            .into_iter()
            .filter_map(|lane| leader_in_lane(&state_after.vehicles, agent, lane, road))
            .map(|(_, gap)| gap)
            .fold(f64::INFINITY, f64::min);
        if d_long.is_finite() {
            safety_shortfall(d_long, env.t_min_gap)
        } else {
            0.0
        }
    } else {
        0.0
    };

    let lat_lanes: Vec<usize> = if maneuvering {
        vec![agent.target_lane()]
    } else if env.lat_safety_every_step {
        let mut lanes = Vec::new();
        if agent.lane + 1 < road.lane_count {
            lanes.push(agent.lane + 1);
        }
        if agent.lane > 0 {
            lanes.push(agent.lane - 1);
        }
        lanes
    } else {
        Vec::new()
    };
    let d_lat = lat_lanes
        .into_iter()
        .filter_map(|lane| min_lane_distance(state_after, agent, lane, road))
        .filter(|&d| d <= env.t_lat)
        .fold(f64::INFINITY, f64::min);
    let l_lat = if d_lat.is_finite() {
        safety_shortfall(d_lat, env.t_lat)
    } else {
        0.0
    };

    (l_lon, l_lat, l_col, l_lon + l_lat + l_col)
}

/// Comfort reward from the change rate of applied acceleration.
pub fn comfort_reward(prev_accel: f64, accel: f64, dt: f64, env: &EnvConfig) -> f64 {
    debug_assert!(dt > 0.0);
    let delta = accel - prev_accel;
    if env.comfort_literal {
        -delta / (JERK_MAX * JERK_MAX)
    } else {
        let jerk = delta / dt;
        (-(jerk * jerk) / (JERK_MAX * JERK_MAX)).clamp(-1.0, 0.0)
    }
}

/// Which of the five invalid lane-change cases an action triggers. All flags
/// stay clear for non-lane-change actions and for commands issued during an
/// active maneuver (those are no-ops).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UtilityFlags {
    pub left_from_leftmost: bool,
    pub right_from_rightmost: bool,
    pub no_leader_ahead: bool,
    pub current_leader_faster: bool,
    pub target_leader_slower: bool,
}

impl UtilityFlags {
    pub fn any(&self) -> bool {
        self.left_from_leftmost
            || self.right_from_rightmost
            || self.no_leader_ahead
            || self.current_leader_faster
            || self.target_leader_slower
    }

    /// Penalties compose additively across cases.
    pub fn penalty(&self) -> f64 {
        let mut r = 0.0;
        if self.left_from_leftmost {
            r -= 0.5;
        }
        if self.right_from_rightmost {
            r -= 0.5;
        }
        if self.no_leader_ahead {
            r -= 5.0;
        }
        if self.current_leader_faster {
            r -= 0.5;
        }
        if self.target_leader_slower {
            r -= 0.5;
        }
        r
    }
}

/// Evaluate the invalid lane-change cases for an action against the pre-step
/// state. Leaders count when their front bumper sits within the 100 m
/// sensing range ahead of the ego front bumper.
pub fn utility_flags(
    state: &SimState,
    agent: &VehicleState,
    action: AgentAction,
    road: &RoadSegment,
) -> UtilityFlags {
    let mut flags = UtilityFlags::default();
    let Some(direction) = action.lane_change_direction() else {
        return flags;
    };
    if agent.maneuver.is_some() {
        return flags;
    }

    flags.left_from_leftmost =
        direction == crate::road::LaneChangeDirection::Left && agent.lane == road.leftmost_lane();
    flags.right_from_rightmost =
        direction == crate::road::LaneChangeDirection::Right && agent.lane == 0;

    let within_range = |leader: &VehicleState| leader.lon_pos - agent.lon_pos <= NEIGHBOR_RANGE;
    let current_leader = leader_in_lane(&state.vehicles, agent, agent.lane, road)
        .map(|(v, _)| v)
        .filter(|v| within_range(v));
    flags.no_leader_ahead = current_leader.is_none();
    flags.current_leader_faster = current_leader.is_some_and(|v| v.lon_speed > agent.lon_speed);

    let target = agent.lane as isize + direction.delta();
    if target >= 0 && (target as usize) < road.lane_count {
        let target_leader = leader_in_lane(&state.vehicles, agent, target as usize, road)
            .map(|(v, _)| v)
            .filter(|v| within_range(v));
        flags.target_leader_slower = target_leader.is_some_and(|v| v.lon_speed < agent.lon_speed);
    }

    flags
}

/// Lane-change utility reward for the chosen action.
pub fn utility_reward(
    state_before: &SimState,
    action: AgentAction,
    agent_id: u64,
    road: &RoadSegment,
) -> Result<f64, EnvError> {
    let agent = state_before
        .vehicle(agent_id)
        .ok_or(EnvError::UnknownAgent(agent_id))?;
    Ok(utility_flags(state_before, agent, action, road).penalty())
}

/// Assemble the full per-step reward for one agent. The global mean speed
/// comes from the post-step segment statistics; agents removed during the
/// step are evaluated on their final snapshots from the step events.
#[allow(clippy::too_many_arguments)]
pub fn reward(
    state_before: &SimState,
    action: AgentAction,
    state_after: &SimState,
    agent_id: u64,
    events: &StepEvents,
    stats: &SegmentStats,
    road: &RoadSegment,
    env: &EnvConfig,
) -> Result<RewardBreakdown, EnvError> {
    let after = state_after
        .vehicle(agent_id)
        .or_else(|| events.removed_state(agent_id))
        .ok_or(EnvError::UnknownAgent(agent_id))?;

    let (g_e, l_e, r_e) = efficiency_reward(stats.mean_speed, after.lon_speed, road);
    let (l_lon, l_lat, l_col, r_s) = safety_reward(state_after, agent_id, events, road, env);
    let r_c = comfort_reward(after.prev_accel, after.accel, env.dt, env);
    let r_u = utility_reward(state_before, action, agent_id, road)?;

    let w = env.weights;
    let total = w.w1 * r_e + w.w2 * r_s + w.w3 * r_c + w.w4 * r_u;
    Ok(RewardBreakdown {
        g_e,
        l_e,
        r_e,
        l_lon,
        l_lat,
        l_col,
        r_s,
        r_c,
        r_u,
        weights: w,
        total,
    })
}
