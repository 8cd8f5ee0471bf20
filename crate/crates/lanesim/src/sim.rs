//! World state and the fixed-interval step loop: injection, action
//! application, maneuver execution, HV behavior, collision handling, and
//! segment statistics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{utility_flags, AgentAction, UtilityFlags};
use crate::hv::{
    apply_imperfection, idm_acceleration, mobil_decide, DriverProfile, GapSpeed, IdmParams,
    LaneNeighbors, MobilParams,
};
use crate::road::{
    advance_kinematics, lateral_center, occupied_lanes, Maneuver, RoadSegment, VehicleKind,
    VehicleState, ACCEL_LIMIT, SPEED_CAP,
};

/// Length of the clear stretch required at a lane entry before spawning, m.
const ENTRY_CLEARANCE: f64 = 15.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("action supplied for unknown or dead agent id {0}")]
    UnknownAgent(u64),
    #[error("missing action for live agent id {0}")]
    MissingAction(u64),
}

/// Everything needed to construct and run one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub road: RoadSegment,
    /// Step interval, s.
    pub dt: f64,
    /// Mean injection rate, veh/h, realized as a per-step Bernoulli draw.
    pub injection_rate: f64,
    /// Probability that an injected vehicle is an AV.
    pub agent_fraction: f64,
    /// Initial speed of injected vehicles, m/s.
    pub injection_speed: f64,
    pub episode_steps: u32,
    pub seed: u64,
    pub hv_profiles: Vec<DriverProfile>,
    pub mobil: MobilParams,
    /// Duration of a lane-change maneuver, s.
    pub maneuver_duration: f64,
    /// How often each HV re-evaluates its lane choice, s.
    pub hv_lane_change_interval: f64,
    pub av_body_length: f64,
    /// Per-vehicle desired speed is drawn uniformly from this fraction range
    /// of v_max for HVs.
    pub hv_v0_factor_range: (f64, f64),
    /// AVs placed on the road at episode start (besides random injection),
    /// spaced longitudinally over round-robin lanes.
    pub bootstrap_agents: usize,
}

pub fn default_hv_profiles() -> Vec<DriverProfile> {
    let idm = IdmParams::default();
    vec![
        DriverProfile {
            body_length: 4.5,
            sigma: 0.2,
            idm: idm.clone(),
        }, // compact
        DriverProfile {
            body_length: 5.0,
            sigma: 0.3,
            idm: idm.clone(),
        }, // sedan
        DriverProfile {
            body_length: 5.5,
            sigma: 0.4,
            idm: idm.clone(),
        }, // van
        DriverProfile {
            body_length: 8.0,
            sigma: 0.5,
            idm,
        }, // truck
    ]
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            road: RoadSegment::default(),
            dt: 0.1,
            injection_rate: 2160.0,
            agent_fraction: 0.1,
            injection_speed: 20.1168,
            episode_steps: 3000,
            seed: 42,
            hv_profiles: default_hv_profiles(),
            mobil: MobilParams::default(),
            maneuver_duration: 1.0,
            hv_lane_change_interval: 1.0,
            av_body_length: 5.0,
            hv_v0_factor_range: (0.9, 1.0),
            bootstrap_agents: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.road.validate()?;
        if self.dt <= 0.0 {
            return Err("dt must be positive".into());
        }
        if self.episode_steps == 0 {
            return Err("episode_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.agent_fraction) {
            return Err("agent_fraction must lie in [0, 1]".into());
        }
        if self.hv_profiles.is_empty() {
            return Err("at least one HV profile is required".into());
        }
        if self.maneuver_duration <= 0.0 {
            return Err("maneuver_duration must be positive".into());
        }
        Ok(())
    }

    fn maneuver_steps(&self) -> u32 {
        ((self.maneuver_duration / self.dt).ceil() as u32).max(1)
    }

    fn hv_lane_change_steps(&self) -> u64 {
        ((self.hv_lane_change_interval / self.dt).round() as u64).max(1)
    }
}

/// Episode bookkeeping. Conservation holds every step:
/// injected = live + exited + removed_by_collision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Counters {
    pub injected: u64,
    pub spawn_skips: u64,
    /// Collision events (vehicle pairs).
    pub collisions: u64,
    pub agent_collisions: u64,
    pub removed_by_collision: u64,
    pub exited: u64,
    pub completed_lane_changes: u64,
    pub completed_agent_lane_changes: u64,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub time_step: u64,
    pub vehicles: Vec<VehicleState>,
    pub counters: Counters,
    next_id: u64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionEvent {
    /// The pair involved, lower id first.
    pub ids: (u64, u64),
    /// Front-bumper position of the leading vehicle at detection, m.
    pub lon_pos: f64,
}

/// Everything observable about one step beyond the state itself.
#[derive(Debug, Clone, Default)]
pub struct StepEvents {
    pub collisions: Vec<CollisionEvent>,
    pub exits: Vec<u64>,
    /// Utility-relevant invalid-action cases per agent this step.
    pub invalid_actions: Vec<(u64, UtilityFlags)>,
    pub initiated_maneuvers: Vec<u64>,
    pub completed_maneuvers: Vec<u64>,
    /// Final (post-kinematics) snapshots of vehicles removed this step,
    /// whether by collision or by exiting the segment.
    pub removed: Vec<VehicleState>,
    pub spawned: Vec<u64>,
}

impl StepEvents {
    pub fn collided(&self, id: u64) -> bool {
        self.collisions
            .iter()
            .any(|c| c.ids.0 == id || c.ids.1 == id)
    }

    pub fn removed_state(&self, id: u64) -> Option<&VehicleState> {
        self.removed.iter().find(|v| v.id == id)
    }
}

/// Segment-level traffic statistics over the evaluation zone.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    /// Vehicles per meter over the zone, all lanes combined.
    pub density: f64,
    /// Arithmetic mean speed; v_max by convention when the zone is empty.
    pub mean_speed: f64,
    pub lane_mean_speed: Vec<f64>,
    pub lane_density: Vec<f64>,
    pub vehicle_count: usize,
}

impl SimState {
    pub fn new(config: &SimConfig) -> Self {
        let mut state = SimState {
            time_step: 0,
            vehicles: Vec::new(),
            counters: Counters::default(),
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        for i in 0..config.bootstrap_agents {
            let lane = (config.road.lane_count / 2 + i) % config.road.lane_count;
            let v = VehicleState {
                id: state.next_id,
                kind: VehicleKind::Av,
                lon_pos: 20.0 * i as f64,
                lat_pos: lateral_center(lane, &config.road),
                lon_speed: config.injection_speed,
                lat_speed: 0.0,
                accel: 0.0,
                prev_accel: 0.0,
                lane,
                maneuver: None,
                body_length: config.av_body_length,
                sigma: 0.0,
                desired_speed: config.road.v_max,
            };
            state.next_id += 1;
            state.counters.injected += 1;
            state.vehicles.push(v);
        }
        state
    }

    pub fn vehicle(&self, id: u64) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    /// Ids of all live AVs, ascending.
    pub fn live_agent_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .vehicles
            .iter()
            .filter(|v| v.kind.is_av())
            .map(|v| v.id)
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Lanes a vehicle counts as occupying for collision detection and neighbor
/// queries. During a maneuver this includes the target lane from initiation
/// and the source lane until the vehicle is within 0.9 m of the target lane
/// center; otherwise it is the plain lateral footprint.
pub fn lane_membership(v: &VehicleState, road: &RoadSegment) -> Vec<usize> {
    let mut lanes = occupied_lanes(v, road);
    if v.maneuver.is_some() {
        let target = v.target_lane();
        if !lanes.contains(&target) {
            lanes.push(target);
        }
        let target_center = lateral_center(target, road);
        if (v.lat_pos - target_center).abs() >= 0.9 {
            let source = v.source_lane();
            if !lanes.contains(&source) {
                lanes.push(source);
            }
        }
        lanes.sort_unstable();
    }
    lanes
}

fn is_ahead(candidate: &VehicleState, of: &VehicleState) -> bool {
    (candidate.lon_pos, candidate.id) > (of.lon_pos, of.id)
}

/// Nearest vehicle ahead of `of` whose membership includes `lane`, with the
/// bumper-to-bumper gap (negative on overlap).
pub fn leader_in_lane<'a>(
    vehicles: &'a [VehicleState],
    of: &VehicleState,
    lane: usize,
    road: &RoadSegment,
) -> Option<(&'a VehicleState, f64)> {
    vehicles
        .iter()
        .filter(|c| c.id != of.id && is_ahead(c, of) && lane_membership(c, road).contains(&lane))
        .min_by(|a, b| (a.lon_pos, a.id).partial_cmp(&(b.lon_pos, b.id)).unwrap())
        .map(|c| (c, c.lon_pos - c.body_length - of.lon_pos))
}

/// Nearest vehicle behind `of` in `lane`, with the gap measured from the
/// follower's front bumper to `of`'s rear bumper.
pub fn follower_in_lane<'a>(
    vehicles: &'a [VehicleState],
    of: &VehicleState,
    lane: usize,
    road: &RoadSegment,
) -> Option<(&'a VehicleState, f64)> {
    vehicles
        .iter()
        .filter(|c| c.id != of.id && !is_ahead(c, of) && lane_membership(c, road).contains(&lane))
        .max_by(|a, b| (a.lon_pos, a.id).partial_cmp(&(b.lon_pos, b.id)).unwrap())
        .map(|c| (c, of.lon_pos - of.body_length - c.lon_pos))
}

fn lane_neighbors(
    vehicles: &[VehicleState],
    of: &VehicleState,
    lane: usize,
    road: &RoadSegment,
) -> LaneNeighbors {
    LaneNeighbors {
        leader: leader_in_lane(vehicles, of, lane, road).map(|(l, gap)| GapSpeed {
            gap,
            speed: l.lon_speed,
        }),
        follower: follower_in_lane(vehicles, of, lane, road).map(|(f, gap)| GapSpeed {
            gap,
            speed: f.lon_speed,
        }),
    }
}

/// IDM acceleration against the nearest leader over every lane the vehicle
/// currently counts as occupying.
fn hv_car_following(
    vehicles: &[VehicleState],
    v: &VehicleState,
    idm: &IdmParams,
    road: &RoadSegment,
) -> f64 {
    let mut nearest: Option<GapSpeed> = None;
    for lane in lane_membership(v, road) {
        if let Some((leader, gap)) = leader_in_lane(vehicles, v, lane, road) {
            if nearest.is_none_or(|n| gap < n.gap) {
                nearest = Some(GapSpeed {
                    gap,
                    speed: leader.lon_speed,
                });
            }
        }
    }
    idm_acceleration(v.lon_speed, nearest, idm)
}

/// One step of simulated time.
///
/// The action map must cover exactly the live AVs. HV decisions and agent
/// actions are evaluated against the start-of-step snapshot; lane-change
/// commitments become visible to vehicles evaluated later in the same pass.
pub fn step(
    state: &mut SimState,
    agent_actions: &BTreeMap<u64, AgentAction>,
    config: &SimConfig,
) -> Result<StepEvents, SimError> {
    let road = &config.road;
    let mut events = StepEvents::default();

    // stable pass order: ascending longitudinal position, then id
    state
        .vehicles
        .sort_by(|a, b| (a.lon_pos, a.id).partial_cmp(&(b.lon_pos, b.id)).unwrap());

    for &id in agent_actions.keys() {
        match state.vehicle(id) {
            Some(v) if v.kind.is_av() => {}
            _ => return Err(SimError::UnknownAgent(id)),
        }
    }
    for v in &state.vehicles {
        if v.kind.is_av() && !agent_actions.contains_key(&v.id) {
            return Err(SimError::MissingAction(v.id));
        }
    }

    // Utility flags are judged against the pristine snapshot, before any
    // lane-change commitment of this step becomes visible.
    for (&id, &action) in agent_actions {
        if action.lane_change_direction().is_some() {
            let v = state.vehicle(id).unwrap().clone();
            if v.maneuver.is_none() {
                let flags = utility_flags(state, &v, action, road);
                if flags.any() {
                    events.invalid_actions.push((id, flags));
                }
            }
        }
    }

    // Phase 1: HVs choose accelerations and lane changes against the
    // snapshot. Positions and speeds stay frozen; committed maneuvers are
    // immediately visible to vehicles evaluated later in the pass.
    let hv_lc_steps = config.hv_lane_change_steps();
    let maneuver_steps = config.maneuver_steps();
    let n = state.vehicles.len();
    let mut accels = vec![0.0f64; n];

    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        let v = state.vehicles[i].clone();
        let VehicleKind::Hv(profile_idx) = v.kind else {
            continue;
        };
        let profile = &config.hv_profiles[profile_idx % config.hv_profiles.len()];
        let idm = IdmParams {
            v0: v.desired_speed,
            ..profile.idm.clone()
        };
        let raw = hv_car_following(&state.vehicles, &v, &idm, road);
        accels[i] = apply_imperfection(raw, v.sigma, &mut state.rng);

        let due = (state.time_step + v.id).is_multiple_of(hv_lc_steps);
        if due && v.maneuver.is_none() {
            let current = lane_neighbors(&state.vehicles, &v, v.lane, road);
            let left = (v.lane + 1 < road.lane_count)
                .then(|| lane_neighbors(&state.vehicles, &v, v.lane + 1, road));
            let right = (v.lane > 0).then(|| lane_neighbors(&state.vehicles, &v, v.lane - 1, road));
            if let Some(direction) = mobil_decide(
                v.lon_speed,
                v.body_length,
                &current,
                left.as_ref(),
                right.as_ref(),
                &config.mobil,
                &idm,
            ) {
                state.vehicles[i].maneuver = Some(Maneuver::new(direction, maneuver_steps));
                events.initiated_maneuvers.push(v.id);
            }
        }
    }

    // Phase 2: agent actions. Longitudinal choice applies immediately; a
    // lane-change command starts a maneuver unless one is already active.
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        let v = state.vehicles[i].clone();
        if !v.kind.is_av() {
            continue;
        }
        let action = agent_actions[&v.id];
        accels[i] = match action {
            AgentAction::Accelerate => ACCEL_LIMIT,
            AgentAction::Decelerate => -ACCEL_LIMIT,
            _ => 0.0,
        };
        if let Some(direction) = action.lane_change_direction() {
            if v.maneuver.is_none() {
                let target = v.lane as isize + direction.delta();
                if target >= 0 && (target as usize) < road.lane_count {
                    state.vehicles[i].maneuver = Some(Maneuver::new(direction, maneuver_steps));
                    events.initiated_maneuvers.push(v.id);
                }
            }
        }
    }

    // Phase 3: lateral maneuver progression.
    let lat_rate = road.lane_width / config.maneuver_duration;
    for v in state.vehicles.iter_mut() {
        let Some(mut m) = v.maneuver else { continue };
        let before_half = m.progress() < 0.5;
        m.steps_done += 1;
        let source = if before_half && m.progress() >= 0.5 {
            // lane field flips to the target at the midpoint
            let source = v.lane;
            v.lane = (v.lane as isize + m.direction.delta()) as usize;
            source
        } else {
            v.source_lane()
        };
        let target = if m.progress() < 0.5 {
            (v.lane as isize + m.direction.delta()) as usize
        } else {
            v.lane
        };
        let from = lateral_center(source, road);
        let to = lateral_center(target, road);
        v.lat_pos = from + (to - from) * m.progress();
        v.lat_speed = lat_rate * m.direction.delta() as f64;
        if m.is_complete() {
            v.lat_pos = to;
            v.lat_speed = 0.0;
            v.maneuver = None;
            events.completed_maneuvers.push(v.id);
        } else {
            v.maneuver = Some(m);
        }
    }
    for &id in &events.completed_maneuvers {
        state.counters.completed_lane_changes += 1;
        if state.vehicles.iter().any(|v| v.id == id && v.kind.is_av()) {
            state.counters.completed_agent_lane_changes += 1;
        }
    }

    // Phase 4: longitudinal kinematics.
    for (i, v) in state.vehicles.iter_mut().enumerate() {
        *v = advance_kinematics(v, accels[i], config.dt);
    }

    // Phase 5: collisions, then exits.
    detect_collisions(state, road, &mut events);

    let mut idx = 0;
    while idx < state.vehicles.len() {
        if state.vehicles[idx].lon_pos > road.total_length {
            let v = state.vehicles.remove(idx);
            state.counters.exited += 1;
            events.exits.push(v.id);
            events.removed.push(v);
        } else {
            idx += 1;
        }
    }

    // Phase 6: injection.
    inject_vehicles(state, config, &mut events);

    state.time_step += 1;
    Ok(events)
}

/// Collision detection and removal.
///
/// Any pair sharing a membership lane with a negative bumper-to-bumper gap
/// collides. Pairs are matched greedily, deepest overlap first, lowest ids
/// winning ties, and a vehicle joins at most one pair per step. Touching
/// bumpers (gap exactly zero) is not a collision. Both vehicles of a pair
/// are removed; each removal counts toward the collision exit bookkeeping.
pub fn detect_collisions(state: &mut SimState, road: &RoadSegment, events: &mut StepEvents) {
    let vehicles = &state.vehicles;
    let n = vehicles.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (vehicles[a].lon_pos, vehicles[a].id)
            .partial_cmp(&(vehicles[b].lon_pos, vehicles[b].id))
            .unwrap()
    });

    // (gap, low id, high id, follower idx, leader idx)
    let mut candidates: Vec<(f64, u64, u64, usize, usize)> = Vec::new();
    let max_len = vehicles.iter().map(|v| v.body_length).fold(0.0, f64::max);
    for (k, &i) in order.iter().enumerate() {
        let vi = &vehicles[i];
        let lanes_i = lane_membership(vi, road);
        for &j in order.iter().skip(k + 1) {
            let vj = &vehicles[j];
            if vj.lon_pos - vi.lon_pos >= max_len {
                break;
            }
            if !lane_membership(vj, road)
                .iter()
                .any(|l| lanes_i.contains(l))
            {
                continue;
            }
            let gap = vj.lon_pos - vj.body_length - vi.lon_pos;
            if gap < 0.0 {
                candidates.push((gap, vi.id.min(vj.id), vi.id.max(vj.id), i, j));
            }
        }
    }
    candidates.sort_by(|a, b| (a.0, a.1, a.2).partial_cmp(&(b.0, b.1, b.2)).unwrap());

    let mut taken = vec![false; n];
    let mut removed_idx: Vec<usize> = Vec::new();
    for (_, _, _, i, j) in candidates {
        if taken[i] || taken[j] {
            continue;
        }
        taken[i] = true;
        taken[j] = true;
        let (a, b) = (&vehicles[i], &vehicles[j]);
        events.collisions.push(CollisionEvent {
            ids: (a.id.min(b.id), a.id.max(b.id)),
            lon_pos: a.lon_pos.max(b.lon_pos),
        });
        state.counters.collisions += 1;
        if a.kind.is_av() || b.kind.is_av() {
            state.counters.agent_collisions += 1;
        }
        removed_idx.push(i);
        removed_idx.push(j);
    }

    removed_idx.sort_unstable();
    for &idx in removed_idx.iter().rev() {
        let v = state.vehicles.remove(idx);
        state.counters.removed_by_collision += 1;
        events.removed.push(v);
    }
}

/// Bernoulli injection at the segment entry.
///
/// With probability `rate * dt / 3600` one vehicle spawns at position zero
/// in a uniformly chosen lane whose first 15 m are clear; if no lane is
/// clear the spawn is skipped and counted.
pub fn inject_vehicles(state: &mut SimState, config: &SimConfig, events: &mut StepEvents) {
    let p = config.injection_rate * config.dt / 3600.0;
    let u: f64 = state.rng.random();
    if u >= p {
        return;
    }

    let road = &config.road;
    let clear: Vec<usize> = (0..road.lane_count)
        .filter(|&lane| {
            !state.vehicles.iter().any(|v| {
                v.lon_pos - v.body_length < ENTRY_CLEARANCE
                    && lane_membership(v, road).contains(&lane)
            })
        })
        .collect();
    if clear.is_empty() {
        state.counters.spawn_skips += 1;
        return;
    }

    let lane = clear[state.rng.random_range(0..clear.len())];
    let is_av = state.rng.random::<f64>() < config.agent_fraction;
    let (kind, body_length, sigma, desired_speed) = if is_av {
        (VehicleKind::Av, config.av_body_length, 0.0, road.v_max)
    } else {
        let idx = state.rng.random_range(0..config.hv_profiles.len());
        let profile = &config.hv_profiles[idx];
        let (lo, hi) = config.hv_v0_factor_range;
        let factor = lo + (hi - lo) * state.rng.random::<f64>();
        (
            VehicleKind::Hv(idx),
            profile.body_length,
            profile.sigma,
            factor * road.v_max,
        )
    };

    let v = VehicleState {
        id: state.next_id,
        kind,
        lon_pos: 0.0,
        lat_pos: lateral_center(lane, road),
        lon_speed: config.injection_speed,
        lat_speed: 0.0,
        accel: 0.0,
        prev_accel: 0.0,
        lane,
        maneuver: None,
        body_length,
        sigma,
        desired_speed,
    };
    state.next_id += 1;
    state.counters.injected += 1;
    events.spawned.push(v.id);
    state.vehicles.push(v);
}

/// Traffic statistics over the evaluation zone (positions past the warmup
/// stretch). An empty zone reports free flow: mean speed v_max, density 0;
/// the same convention applies per lane.
pub fn segment_stats(state: &SimState, road: &RoadSegment) -> SegmentStats {
    let zone_length = road.eval_zone_length();
    let mut count = 0usize;
    let mut speed_sum = 0.0f64;
    let mut lane_counts = vec![0usize; road.lane_count];
    let mut lane_speed_sums = vec![0.0f64; road.lane_count];

    for v in &state.vehicles {
        if v.lon_pos >= road.warmup_length {
            count += 1;
            speed_sum += v.lon_speed;
            lane_counts[v.lane] += 1;
            lane_speed_sums[v.lane] += v.lon_speed;
        }
    }

    let mean_speed = if count == 0 {
        road.v_max
    } else {
        speed_sum / count as f64
    };
    let lane_mean_speed: Vec<f64> = (0..road.lane_count)
        .map(|l| {
            if lane_counts[l] == 0 {
                road.v_max
            } else {
                lane_speed_sums[l] / lane_counts[l] as f64
            }
        })
        .collect();
    let lane_density: Vec<f64> = lane_counts
        .iter()
        .map(|&c| c as f64 / zone_length)
        .collect();

    SegmentStats {
        density: count as f64 / zone_length,
        mean_speed: mean_speed.clamp(0.0, SPEED_CAP),
        lane_mean_speed,
        lane_density,
        vehicle_count: count,
    }
}
