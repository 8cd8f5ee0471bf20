//! Acceptance suite: one test per release criterion, each printing a
//! PASS line on success (run with `--nocapture` to see them).
//!
//! The reward oracle below is a deliberately independent re-statement of the
//! reward definitions, written against raw vehicle records rather than the
//! library's query helpers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lanesim::config::ExperimentConfig;
use lanesim::dqn::{run_training, ReplayBuffer, Trainer, TrainerConfig, Transition};
use lanesim::env::{
    efficiency_term, observation_len, observe, reward, safety_shortfall, AgentAction, EnvConfig,
    RewardWeights, JERK_MAX, NEIGHBOR_RANGE,
};
use lanesim::eval::eval_episodes;
use lanesim::nn::{DenseNet, OptimizerConfig, TrainSample};
use lanesim::road::{
    lateral_center, LaneChangeDirection, Maneuver, RoadSegment, VehicleKind, VehicleState,
};
use lanesim::sim::{segment_stats, step, CollisionEvent, SimConfig, SimState, StepEvents};

// ---------------------------------------------------------------------------
// fixture generation
// ---------------------------------------------------------------------------

struct Fixture {
    state_before: SimState,
    state_after: SimState,
    action: AgentAction,
    events: StepEvents,
    env: EnvConfig,
    ego_id: u64,
}

fn make_vehicle(
    id: u64,
    kind: VehicleKind,
    lane: usize,
    lon: f64,
    speed: f64,
    road: &RoadSegment,
    rng: &mut ChaCha8Rng,
) -> VehicleState {
    let accel = rng.random_range(-2.6..2.6);
    let prev_accel = rng.random_range(-2.6..2.6);
    let mut v = VehicleState {
        id,
        kind,
        lon_pos: lon,
        lat_pos: lateral_center(lane, road),
        lon_speed: speed,
        lat_speed: 0.0,
        accel,
        prev_accel,
        lane,
        maneuver: None,
        body_length: [4.5, 5.0, 5.5, 8.0][rng.random_range(0..4)],
        sigma: if kind.is_av() {
            0.0
        } else {
            rng.random_range(0.0..0.5)
        },
        desired_speed: road.v_max,
    };
    // sometimes mid-maneuver, geometry kept coherent with the progress
    if rng.random::<f64>() < 0.45 {
        let dir = if lane + 1 < road.lane_count && (lane == 0 || rng.random::<bool>()) {
            LaneChangeDirection::Left
        } else if lane > 0 {
            LaneChangeDirection::Right
        } else {
            return v;
        };
        let total = 10u32;
        let steps_done = rng.random_range(1..total);
        let mut m = Maneuver::new(dir, total);
        m.steps_done = steps_done;
        let progress = m.progress();
        let (source, target) = match dir {
            LaneChangeDirection::Left => (lane, lane + 1),
            LaneChangeDirection::Right => (lane, lane - 1),
        };
        v.lane = if progress < 0.5 { source } else { target };
        let from = lateral_center(source, road);
        let to = lateral_center(target, road);
        v.lat_pos = from + (to - from) * progress;
        v.lat_speed = (to - from).signum() * road.lane_width / 1.0;
        v.maneuver = Some(m);
    }
    v
}

fn speed_for_regime(regime: u8, road: &RoadSegment, rng: &mut ChaCha8Rng) -> f64 {
    match regime {
        0 => rng.random_range(0.0..road.v_min),
        1 => rng.random_range(road.v_min..road.v_max),
        _ => rng.random_range(road.v_max..50.0),
    }
}

fn random_fixture(road: &RoadSegment, rng: &mut ChaCha8Rng) -> Fixture {
    let sim_cfg = SimConfig {
        road: road.clone(),
        ..SimConfig::default()
    };
    let mut state = SimState::new(&sim_cfg);
    let regime = rng.random_range(0..3u8);

    let ego_id = 0u64;
    let ego_lane = rng.random_range(0..road.lane_count);
    let ego_lon = rng.random_range(50.0..road.total_length - 50.0);
    let ego_speed = speed_for_regime(regime, road, rng);
    let ego = make_vehicle(
        ego_id,
        VehicleKind::Av,
        ego_lane,
        ego_lon,
        ego_speed,
        road,
        rng,
    );
    state.vehicles.push(ego.clone());

    let others = rng.random_range(0..25usize);
    for i in 0..others {
        let lane = rng.random_range(0..road.lane_count);
        let lon = if rng.random::<bool>() {
            (ego_lon + rng.random_range(-120.0..120.0)).clamp(0.0, road.total_length)
        } else {
            rng.random_range(0.0..road.total_length)
        };
        let speed = speed_for_regime(regime, road, rng);
        state.vehicles.push(make_vehicle(
            i as u64 + 1,
            VehicleKind::Hv(rng.random_range(0..4)),
            lane,
            lon,
            speed,
            road,
            rng,
        ));
    }
    // occasionally park someone right on top of the ego's headway or its
    // target lane so the tight safety branches fire
    if rng.random::<f64>() < 0.35 {
        let lane = ego.target_lane();
        let lon = ego_lon + rng.random_range(-9.0..14.0);
        if (0.0..road.total_length).contains(&lon) {
            state.vehicles.push(make_vehicle(
                900,
                VehicleKind::Hv(0),
                lane,
                lon,
                speed_for_regime(regime, road, rng),
                road,
                rng,
            ));
        }
    }

    let action = AgentAction::from_index(rng.random_range(0..5)).unwrap();

    // the post-step state: everyone advances one interval
    let mut state_after = state.clone();
    for v in state_after.vehicles.iter_mut() {
        let new_accel = rng.random_range(-2.6..2.6);
        v.prev_accel = v.accel;
        v.accel = new_accel;
        v.lon_pos += v.lon_speed * 0.1;
        v.lon_speed = (v.lon_speed + new_accel * 0.1).clamp(0.0, 50.0);
        if let Some(mut m) = v.maneuver {
            m.steps_done += 1;
            let progress = m.progress();
            let source = v.source_lane();
            let target = v.target_lane();
            if progress >= 0.5 {
                v.lane = target;
            }
            let from = lateral_center(source, road);
            let to = lateral_center(target, road);
            v.lat_pos = from + (to - from) * progress;
            if m.is_complete() {
                v.maneuver = None;
                v.lat_speed = 0.0;
                v.lat_pos = to;
            } else {
                v.maneuver = Some(m);
            }
        }
    }

    let mut events = StepEvents::default();
    let scenario: f64 = rng.random();
    if scenario < 0.12 && others > 0 {
        // ego collides with a partner; both leave the state
        let partner_id = rng.random_range(1..=others as u64);
        let ego_after = state_after
            .vehicles
            .iter()
            .find(|v| v.id == ego_id)
            .unwrap()
            .clone();
        let partner = state_after
            .vehicles
            .iter()
            .find(|v| v.id == partner_id)
            .unwrap()
            .clone();
        events.collisions.push(CollisionEvent {
            ids: (ego_id.min(partner_id), ego_id.max(partner_id)),
            lon_pos: ego_after.lon_pos.max(partner.lon_pos),
        });
        events.removed.push(ego_after);
        events.removed.push(partner);
        state_after
            .vehicles
            .retain(|v| v.id != ego_id && v.id != partner_id);
    } else if scenario < 0.17 {
        // ego exits the segment
        let mut ego_after = state_after
            .vehicles
            .iter()
            .find(|v| v.id == ego_id)
            .unwrap()
            .clone();
        ego_after.lon_pos = road.total_length + rng.random_range(0.1..3.0);
        events.exits.push(ego_id);
        events.removed.push(ego_after);
        state_after.vehicles.retain(|v| v.id != ego_id);
    }

    let env = EnvConfig {
        comfort_literal: rng.random::<f64>() < 0.1,
        weights: RewardWeights {
            w1: rng.random_range(0.25..2.0),
            w2: rng.random_range(0.25..2.0),
            w3: rng.random_range(0.25..2.0),
            w4: rng.random_range(0.25..2.0),
        },
        ..EnvConfig::default()
    };

    Fixture {
        state_before: state,
        state_after,
        action,
        events,
        env,
        ego_id,
    }
}

// ---------------------------------------------------------------------------
// the independent reward oracle
// ---------------------------------------------------------------------------

mod oracle {
    use super::*;

    pub struct OracleBreakdown {
        pub g_e: f64,
        pub l_e: f64,
        pub r_e: f64,
        pub l_lon: f64,
        pub l_lat: f64,
        pub l_col: f64,
        pub r_s: f64,
        pub r_c: f64,
        pub r_u: f64,
        pub total: f64,
    }

    fn piecewise_speed_term(v: f64, road: &RoadSegment) -> f64 {
        if v > road.v_max {
            -(v - road.v_max) / road.v_max
        } else if v >= road.v_min {
            (v - road.v_min) / road.v_min
        } else {
            -(road.v_min - v) / road.v_min
        }
    }

    fn zone_mean_speed(state: &SimState, road: &RoadSegment) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in &state.vehicles {
            if v.lon_pos >= road.warmup_length {
                sum += v.lon_speed;
                count += 1;
            }
        }
        if count == 0 {
            road.v_max
        } else {
            sum / count as f64
        }
    }

    fn footprint(v: &VehicleState, road: &RoadSegment) -> Vec<usize> {
        let mut lanes = Vec::new();
        for lane in 0..road.lane_count {
            let lo = lane as f64 * road.lane_width;
            let hi = (lane + 1) as f64 * road.lane_width;
            if v.lat_pos - 0.9 < hi && v.lat_pos + 0.9 >= lo {
                lanes.push(lane);
            }
        }
        lanes
    }

    fn membership(v: &VehicleState, road: &RoadSegment) -> Vec<usize> {
        let mut lanes = footprint(v, road);
        if let Some(m) = &v.maneuver {
            let (source, target) = if m.progress() < 0.5 {
                let delta = match m.direction {
                    LaneChangeDirection::Left => 1isize,
                    LaneChangeDirection::Right => -1,
                };
                (v.lane, (v.lane as isize + delta) as usize)
            } else {
                let delta = match m.direction {
                    LaneChangeDirection::Left => 1isize,
                    LaneChangeDirection::Right => -1,
                };
                ((v.lane as isize - delta) as usize, v.lane)
            };
            if !lanes.contains(&target) {
                lanes.push(target);
            }
            if (v.lat_pos - (target as f64 + 0.5) * road.lane_width).abs() >= 0.9
                && !lanes.contains(&source)
            {
                lanes.push(source);
            }
        }
        lanes
    }

    fn is_ahead(candidate: &VehicleState, of: &VehicleState) -> bool {
        (candidate.lon_pos, candidate.id) > (of.lon_pos, of.id)
    }

    /// Nearest-ahead bumper gap over any of the given lanes.
    fn min_leader_gap(
        state: &SimState,
        ego: &VehicleState,
        lanes: &[usize],
        road: &RoadSegment,
    ) -> Option<f64> {
        let mut best: Option<(f64, u64)> = None;
        for v in &state.vehicles {
            if v.id == ego.id || !is_ahead(v, ego) {
                continue;
            }
            if !membership(v, road).iter().any(|l| lanes.contains(l)) {
                continue;
            }
            if best.is_none() || Some((v.lon_pos, v.id)) < best {
                best = Some((v.lon_pos, v.id));
            }
        }
        best.map(|(pos, id)| {
            let leader = state.vehicles.iter().find(|v| v.id == id).unwrap();
            pos - leader.body_length - ego.lon_pos
        })
    }

    fn clamp_unit(x: f64) -> f64 {
        x.clamp(-1.0, 0.0)
    }

    fn lon_safety(
        state: &SimState,
        ego: &VehicleState,
        env: &EnvConfig,
        road: &RoadSegment,
    ) -> f64 {
        if !(env.lon_safety_every_step || ego.maneuver.is_some()) {
            return 0.0;
        }
        // minimum per-lane nearest-leader gap across the lanes the ego occupies
        let lanes = membership(ego, road);
        let mut d_long = f64::INFINITY;
        for lane in &lanes {
            if let Some(gap) = min_leader_gap(state, ego, &[*lane], road) {
                d_long = d_long.min(gap);
            }
        }
        if d_long.is_finite() && d_long <= env.t_min_gap {
            clamp_unit((d_long - env.t_min_gap) / env.t_min_gap)
        } else {
            0.0
        }
    }

    fn lat_safety(
        state: &SimState,
        ego: &VehicleState,
        env: &EnvConfig,
        road: &RoadSegment,
    ) -> f64 {
        let lanes: Vec<usize> = if ego.maneuver.is_some() {
            vec![ego.target_lane()]
        } else if env.lat_safety_every_step {
            let mut l = Vec::new();
            if ego.lane + 1 < road.lane_count {
                l.push(ego.lane + 1);
            }
            if ego.lane > 0 {
                l.push(ego.lane - 1);
            }
            l
        } else {
            return 0.0;
        };

        let mut d_lat = f64::INFINITY;
        for lane in lanes {
            for v in &state.vehicles {
                if v.id == ego.id || !membership(v, road).contains(&lane) {
                    continue;
                }
                let dist = if is_ahead(v, ego) {
                    v.lon_pos - v.body_length - ego.lon_pos
                } else {
                    ego.lon_pos - ego.body_length - v.lon_pos
                };
                if dist <= env.t_lat {
                    d_lat = d_lat.min(dist);
                }
            }
        }
        if d_lat.is_finite() {
            clamp_unit((d_lat - env.t_lat) / env.t_lat)
        } else {
            0.0
        }
    }

    fn utility(
        state: &SimState,
        ego: &VehicleState,
        action: AgentAction,
        road: &RoadSegment,
    ) -> f64 {
        let dir = match action {
            AgentAction::Left => 1isize,
            AgentAction::Right => -1,
            _ => return 0.0,
        };
        if ego.maneuver.is_some() {
            return 0.0;
        }
        let mut r = 0.0;
        if dir == 1 && ego.lane == road.lane_count - 1 {
            r -= 0.5;
        }
        if dir == -1 && ego.lane == 0 {
            r -= 0.5;
        }

        let leader_within = |lane: usize| -> Option<f64> {
            let mut best: Option<(f64, u64, f64)> = None; // pos, id, speed
            for v in &state.vehicles {
                if v.id == ego.id || !is_ahead(v, ego) {
                    continue;
                }
                if !membership(v, road).contains(&lane) {
                    continue;
                }
                if best.is_none() || (v.lon_pos, v.id) < best.map(|(p, i, _)| (p, i)).unwrap() {
                    best = Some((v.lon_pos, v.id, v.lon_speed));
                }
            }
            best.and_then(|(pos, _, speed)| (pos - ego.lon_pos <= NEIGHBOR_RANGE).then_some(speed))
        };

        match leader_within(ego.lane) {
            None => r -= 5.0,
            Some(speed) => {
                if speed > ego.lon_speed {
                    r -= 0.5;
                }
            }
        }
        let target = ego.lane as isize + dir;
        if target >= 0 && (target as usize) < road.lane_count {
            if let Some(speed) = leader_within(target as usize) {
                if speed < ego.lon_speed {
                    r -= 0.5;
                }
            }
        }
        r
    }

    pub fn recompute(fixture: &Fixture, road: &RoadSegment) -> OracleBreakdown {
        let ego_before = fixture
            .state_before
            .vehicles
            .iter()
            .find(|v| v.id == fixture.ego_id)
            .expect("ego present before the step");
        let ego_after = fixture
            .state_after
            .vehicles
            .iter()
            .find(|v| v.id == fixture.ego_id)
            .or_else(|| {
                fixture
                    .events
                    .removed
                    .iter()
                    .find(|v| v.id == fixture.ego_id)
            })
            .expect("ego state after the step");
        let alive = fixture
            .state_after
            .vehicles
            .iter()
            .any(|v| v.id == fixture.ego_id);

        let v_e = zone_mean_speed(&fixture.state_after, road);
        let g_e = piecewise_speed_term(v_e, road);
        let l_e = piecewise_speed_term(ego_after.lon_speed, road);
        let r_e = g_e + l_e;

        let (l_lon, l_lat) = if alive {
            (
                lon_safety(&fixture.state_after, ego_after, &fixture.env, road),
                lat_safety(&fixture.state_after, ego_after, &fixture.env, road),
            )
        } else {
            (0.0, 0.0)
        };
        let collided = fixture
            .events
            .collisions
            .iter()
            .any(|c| c.ids.0 == fixture.ego_id || c.ids.1 == fixture.ego_id);
        let l_col = if collided { -5.0 } else { 0.0 };
        let r_s = l_lon + l_lat + l_col;

        let delta = ego_after.accel - ego_after.prev_accel;
        let r_c = if fixture.env.comfort_literal {
            -delta / (52.0 * 52.0)
        } else {
            let jerk = delta / fixture.env.dt;
            (-(jerk * jerk) / (52.0 * 52.0)).clamp(-1.0, 0.0)
        };

        let r_u = utility(&fixture.state_before, ego_before, fixture.action, road);

        let w = &fixture.env.weights;
        let total = w.w1 * r_e + w.w2 * r_s + w.w3 * r_c + w.w4 * r_u;
        OracleBreakdown {
            g_e,
            l_e,
            r_e,
            l_lon,
            l_lat,
            l_col,
            r_s,
            r_c,
            r_u,
            total,
        }
    }
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_reward_oracle_equivalence() {
    let started = std::time::Instant::now();
    let road = RoadSegment::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);

    for case in 0..1000 {
        let fixture = random_fixture(&road, &mut rng);
        let stats = segment_stats(&fixture.state_after, &road);
        let got = reward(
            &fixture.state_before,
            fixture.action,
            &fixture.state_after,
            fixture.ego_id,
            &fixture.events,
            &stats,
            &road,
            &fixture.env,
        )
        .expect("reward computable");
        let want = oracle::recompute(&fixture, &road);

        let checks = [
            ("g_e", got.g_e, want.g_e),
            ("l_e", got.l_e, want.l_e),
            ("r_e", got.r_e, want.r_e),
            ("l_lon", got.l_lon, want.l_lon),
            ("l_lat", got.l_lat, want.l_lat),
            ("l_col", got.l_col, want.l_col),
            ("r_s", got.r_s, want.r_s),
            ("r_c", got.r_c, want.r_c),
            ("r_u", got.r_u, want.r_u),
            ("total", got.total, want.total),
        ];
        for (name, g, w) in checks {
            assert!(
                (g - w).abs() <= 1e-9,
                "fixture {case}: component {name} diverges: impl {g} vs oracle {w}"
            );
        }
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 10,
        "oracle comparison took {elapsed:?}, budget 10 s"
    );
    println!("criterion 1 (reward oracle equivalence, 1000 fixtures, {elapsed:?}): PASS");
}

#[test]
fn criterion_02_piecewise_branch_coverage() {
    let road = RoadSegment::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE ^ 0xACCE97);

    let mut g_e_branches = [0u32; 3];
    let mut l_e_branches = [0u32; 3];
    let mut l_lon_active = 0u32;
    let mut l_lon_zero = 0u32;
    let mut l_lat_active = 0u32;
    let mut l_lat_zero = 0u32;
    let mut l_col_hit = 0u32;
    let mut l_col_zero = 0u32;
    let mut utility_cases = [0u32; 5];

    for _ in 0..4000 {
        let fixture = random_fixture(&road, &mut rng);
        let stats = segment_stats(&fixture.state_after, &road);
        let got = reward(
            &fixture.state_before,
            fixture.action,
            &fixture.state_after,
            fixture.ego_id,
            &fixture.events,
            &stats,
            &road,
            &fixture.env,
        )
        .unwrap();

        let classify = |v: f64| {
            if v > road.v_max {
                0
            } else if v >= road.v_min {
                1
            } else {
                2
            }
        };
        g_e_branches[classify(stats.mean_speed)] += 1;
        let ego_after_speed = fixture
            .state_after
            .vehicles
            .iter()
            .find(|v| v.id == fixture.ego_id)
            .or_else(|| {
                fixture
                    .events
                    .removed
                    .iter()
                    .find(|v| v.id == fixture.ego_id)
            })
            .unwrap()
            .lon_speed;
        l_e_branches[classify(ego_after_speed)] += 1;

        if got.l_lon < 0.0 {
            l_lon_active += 1;
        } else {
            l_lon_zero += 1;
        }
        if got.l_lat < 0.0 {
            l_lat_active += 1;
        } else {
            l_lat_zero += 1;
        }
        if got.l_col == -5.0 {
            l_col_hit += 1;
        } else {
            assert_eq!(got.l_col, 0.0);
            l_col_zero += 1;
        }
        assert!(
            got.r_u == 0.0 || (-6.0..=-0.5).contains(&got.r_u),
            "utility reward out of range: {}",
            got.r_u
        );
        if !fixture.env.comfort_literal {
            assert!(
                (-1.0..=0.0).contains(&got.r_c),
                "comfort out of range: {}",
                got.r_c
            );
        }

        let ego_before = fixture
            .state_before
            .vehicles
            .iter()
            .find(|v| v.id == fixture.ego_id)
            .unwrap();
        let flags =
            lanesim::env::utility_flags(&fixture.state_before, ego_before, fixture.action, &road);
        for (i, hit) in [
            flags.left_from_leftmost,
            flags.right_from_rightmost,
            flags.no_leader_ahead,
            flags.current_leader_faster,
            flags.target_leader_slower,
        ]
        .into_iter()
        .enumerate()
        {
            if hit {
                utility_cases[i] += 1;
            }
        }
    }

    assert!(
        g_e_branches.iter().all(|&c| c > 0),
        "g_e branches: {g_e_branches:?}"
    );
    assert!(
        l_e_branches.iter().all(|&c| c > 0),
        "l_e branches: {l_e_branches:?}"
    );
    assert!(
        l_lon_active > 0 && l_lon_zero > 0,
        "l_lon: {l_lon_active}/{l_lon_zero}"
    );
    assert!(
        l_lat_active > 0 && l_lat_zero > 0,
        "l_lat: {l_lat_active}/{l_lat_zero}"
    );
    assert!(
        l_col_hit > 0 && l_col_zero > 0,
        "l_col: {l_col_hit}/{l_col_zero}"
    );
    assert!(
        utility_cases.iter().all(|&c| c > 0),
        "utility cases: {utility_cases:?}"
    );

    // boundary values evaluate to exact zeros in their meeting branches
    assert_eq!(efficiency_term(road.v_min, &road), 0.0);
    assert_eq!(-(road.v_max - road.v_max) / road.v_max, 0.0);
    assert_eq!(safety_shortfall(2.5, 2.5), 0.0);
    assert_eq!(safety_shortfall(10.0, 10.0), 0.0);
    // the in-band value at the speed limit follows the middle branch
    assert!((efficiency_term(road.v_max, &road) - 2.0 / 3.0).abs() < 1e-12);

    println!("criterion 2 (piecewise branch coverage + exact boundaries): PASS");
}

#[test]
fn criterion_03_gradient_correctness() {
    let started = std::time::Instant::now();
    let architectures: [Vec<usize>; 3] = [
        vec![4, 3, 5],
        vec![10, 8, 8, 5],
        vec![40, 32, 64, 64, 512, 5],
    ];

    for sizes in &architectures {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6EAD);
        let net = DenseNet::init(sizes, OptimizerConfig::default(), &mut rng).unwrap();
        let inputs: Vec<Vec<f32>> = (0..2)
            .map(|_| {
                (0..sizes[0])
                    .map(|_| rng.random::<f32>() * 2.0 - 1.0)
                    .collect()
            })
            .collect();
        let batch: Vec<TrainSample> = inputs
            .iter()
            .enumerate()
            .map(|(i, input)| TrainSample {
                input,
                action: i % 5,
                target: 0.8 - i as f64,
            })
            .collect();

        let err = net.finite_diff_check(&batch, 1e-5).unwrap();
        assert!(err < 1e-4, "{sizes:?}: max relative error {err}");

        let corrupted = net.finite_diff_check_corrupted(&batch, 1e-5).unwrap();
        assert!(
            corrupted > 5e-2,
            "{sizes:?}: fault injection not detected ({corrupted})"
        );
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "gradient checks took {elapsed:?}, budget 2 min"
    );
    println!("criterion 3 (gradient correctness incl. fault injection, {elapsed:?}): PASS");
}

#[test]
fn criterion_04_dqn_learning_sanity() {
    let started = std::time::Instant::now();
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
    // desk-scale schedule: a hotter learning rate and faster exploration
    // decay suit the tiny scene; scenario, reward, and episode count are
    // the fixed parts of the criterion
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

    let out = tempfile::tempdir().unwrap();
    let summary = run_training(&sim, &cfg.env, &trainer, out.path()).unwrap();

    let mean = |v: &[Option<f64>]| {
        v.iter()
            .map(|r| r.expect("agent alive every episode"))
            .sum::<f64>()
            / v.len() as f64
    };
    let first20 = mean(&summary.episode_rewards[..20]);
    let last20 = mean(&summary.episode_rewards[summary.episode_rewards.len() - 20..]);
    assert!(
        last20 > first20,
        "mean episode reward should rise: first 20 = {first20:.4}, last 20 = {last20:.4}"
    );

    let opt = OptimizerConfig::default();
    let net =
        DenseNet::load_checkpoint(out.path().join("checkpoint_final.bin"), opt.clone()).unwrap();
    let (_, trace) = eval_episodes(&cfg, &net, 1, 9_000_000).unwrap();
    assert!(!trace.is_empty());
    let mean_speed = trace.iter().map(|s| s.2).sum::<f64>() / trace.len() as f64;
    let bar = 0.9 * cfg.sim.road.v_max;
    assert!(
        mean_speed >= bar,
        "greedy policy mean speed {mean_speed:.3} m/s below 0.9 v_max = {bar:.3}"
    );

    // the untrained checkpoint drives strictly slower on the same scene
    let untrained =
        DenseNet::load_checkpoint(out.path().join("checkpoint_initial.bin"), opt).unwrap();
    let (_, trace0) = eval_episodes(&cfg, &untrained, 1, 9_000_000).unwrap();
    let untrained_speed = trace0.iter().map(|s| s.2).sum::<f64>() / trace0.len() as f64;
    assert!(
        mean_speed > untrained_speed,
        "trained {mean_speed:.3} must beat untrained {untrained_speed:.3}"
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 1800,
        "learning sanity took {elapsed:?}, budget 30 min"
    );
    println!(
        "criterion 4 (desk-scale learning: reward {first20:.3} -> {last20:.3}, \
greedy speed {mean_speed:.3} >= {bar:.3}, untrained {untrained_speed:.3}, {elapsed:?}): PASS"
    );
}

#[test]
fn criterion_05_idm_safety_zero_collisions() {
    let started = std::time::Instant::now();
    let mut profiles = lanesim::sim::default_hv_profiles();
    for p in profiles.iter_mut() {
        p.sigma = 0.0;
    }

    for episode in 0..10u64 {
        let config = SimConfig {
            agent_fraction: 0.0,
            hv_profiles: profiles.clone(),
            seed: 1000 + episode,
            ..SimConfig::default()
        };
        let mut state = SimState::new(&config);
        let empty = BTreeMap::new();
        for _ in 0..3000 {
            step(&mut state, &empty, &config).unwrap();
        }
        assert_eq!(
            state.counters.collisions, 0,
            "episode {episode}: collisions with perfect drivers"
        );
        assert!(state.counters.injected > 100, "traffic must actually flow");
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 300,
        "safety episodes took {elapsed:?}, budget 5 min"
    );
    println!("criterion 5 (IDM safety: 10 episodes, zero collisions, {elapsed:?}): PASS");
}

#[test]
fn criterion_06_train_cli_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();

    for dir in [&dir_a, &dir_b] {
        let code = lanesim::cli::run([
            "lanesim",
            "train",
            "--episodes",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "training run failed");
    }

    for file in [
        "metrics.csv",
        "checkpoint_initial.bin",
        "checkpoint_final.bin",
    ] {
        let a = std::fs::read(dir_a.path().join(file)).unwrap();
        let b = std::fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identically seeded runs");
    }
    println!("criterion 6 (bitwise train determinism over 2 episodes): PASS");
}

#[test]
fn criterion_07_hyperparameter_conformance() {
    let cfg = TrainerConfig::default();
    assert_eq!(cfg.minibatch, 32);
    assert_eq!(cfg.buffer_capacity, 400_000);
    assert_eq!(cfg.gamma, 0.99);
    assert_eq!(cfg.eps_start, 1.0);
    assert_eq!(cfg.eps_end, 0.1);
    assert_eq!(cfg.eps_decay, 0.99985);
    assert_eq!(cfg.target_update_interval, 10);
    assert_eq!(cfg.optimizer.learning_rate, 0.00025);
    assert_eq!(cfg.layer_sizes(40), vec![40, 32, 64, 64, 512, 5]);

    // FIFO eviction at the 400,001st insert
    let mut buffer = ReplayBuffer::new(400_000);
    for i in 0..400_001u32 {
        buffer.push(Transition {
            observation: Vec::new(),
            action: (i % 5) as usize,
            reward: i as f32,
            next_observation: Vec::new(),
            terminal: false,
        });
    }
    assert_eq!(buffer.len(), 400_000);
    assert_eq!(buffer.inserted(), 400_001);
    assert_eq!(
        buffer.get(0).unwrap().reward,
        1.0,
        "oldest transition must be gone"
    );
    assert_eq!(buffer.get(399_999).unwrap().reward, 400_000.0);
    drop(buffer);

    // epsilon schedule max(0.1, 0.99985^k) at k in {0, 1000, 15351}
    let sched = TrainerConfig {
        learning_start: 32,
        hidden_layers: vec![4],
        ..TrainerConfig::default()
    };
    let mut trainer = Trainer::new(sched, 2).unwrap();
    for _ in 0..64 {
        trainer.push_transition(Transition {
            observation: vec![0.1, 0.2],
            action: 1,
            reward: 0.5,
            next_observation: vec![0.0, 0.1],
            terminal: false,
        });
    }
    assert_eq!(trainer.epsilon(), 1.0); // k = 0: max(0.1, 0.99985^0) = 1
    let mut first_floor_hit = None;
    for k in 1..=15351u32 {
        trainer.train_step().unwrap().unwrap();
        let expected = 0.99985f64.powi(k as i32).max(0.1);
        assert!(
            (trainer.epsilon() - expected).abs() < 1e-9,
            "k={k}: {} vs closed form {expected}",
            trainer.epsilon()
        );
        if first_floor_hit.is_none() && trainer.epsilon() == 0.1 {
            first_floor_hit = Some(k);
        }
    }
    assert_eq!(
        trainer.epsilon(),
        0.1,
        "epsilon must sit exactly on the floor at k = 15351"
    );
    // 0.99985^15349 = 0.100006..., 0.99985^15350 = 0.099991...: the floor
    // binds from the 15350th decay on
    assert_eq!(first_floor_hit, Some(15350));

    // target sync cadence verified through parameter hashes
    let road = RoadSegment {
        total_length: 600.0,
        warmup_length: 100.0,
        ..RoadSegment::default()
    };
    let sim = SimConfig {
        road,
        injection_rate: 0.0,
        bootstrap_agents: 1,
        episode_steps: 40,
        ..SimConfig::default()
    };
    let cadence = TrainerConfig {
        learning_start: 32,
        hidden_layers: vec![8],
        seed: 3,
        ..TrainerConfig::default()
    };
    let mut trainer = Trainer::new(cadence, observation_len(sim.road.lane_count)).unwrap();
    let env = EnvConfig::default();
    let mut previous_target = trainer.target().params_bytes();
    for episode in 0..21u32 {
        trainer.run_episode(&sim, &env, episode).unwrap();
        let target_now = trainer.target().params_bytes();
        if (episode + 1) % 10 == 0 {
            assert_eq!(
                target_now,
                trainer.online().params_bytes(),
                "episode {}: sync expected",
                episode + 1
            );
            assert_ne!(
                target_now, previous_target,
                "online must have moved between syncs"
            );
        } else {
            assert_eq!(
                target_now,
                previous_target,
                "episode {}: target drifted",
                episode + 1
            );
        }
        previous_target = target_now;
    }

    println!("criterion 7 (hyperparameter conformance): PASS");
}

#[test]
fn criterion_08_observation_conformance() {
    let road = RoadSegment::default();
    let env = EnvConfig::default();
    assert_eq!(observation_len(road.lane_count), 40);

    // write-mask totality over 10,000 random states (the builder asserts in
    // debug builds) and finite entries throughout
    let mut rng = ChaCha8Rng::seed_from_u64(0x0B5);
    for case in 0..10_000 {
        let fixture = random_fixture(&road, &mut rng);
        let obs = observe(&fixture.state_before, fixture.ego_id, &road, &env).unwrap();
        assert_eq!(obs.len(), 40);
        assert!(obs.as_slice().iter().all(|v| v.is_finite()));
        if case % 1000 == 0 {
            // observation building is a pure function of the snapshot
            let again = observe(&fixture.state_before, fixture.ego_id, &road, &env).unwrap();
            assert_eq!(obs, again);
        }
    }

    // neighbor slots match a sort-based oracle on 1,000 random states
    let mut rng = ChaCha8Rng::seed_from_u64(0x0B51);
    for case in 0..1_000 {
        let fixture = random_fixture(&road, &mut rng);
        let state = &fixture.state_before;
        let ego = state
            .vehicles
            .iter()
            .find(|v| v.id == fixture.ego_id)
            .unwrap();
        let obs = observe(state, fixture.ego_id, &road, &env).unwrap();

        let mut candidates: Vec<&VehicleState> = state
            .vehicles
            .iter()
            .filter(|v| v.id != ego.id && (v.lon_pos - ego.lon_pos).abs() <= NEIGHBOR_RANGE)
            .collect();
        candidates.sort_by(|a, b| {
            ((a.lon_pos - ego.lon_pos).abs(), a.id)
                .partial_cmp(&((b.lon_pos - ego.lon_pos).abs(), b.id))
                .unwrap()
        });

        for slot in 0..3 {
            let base = 5 + slot * 6;
            match candidates.get(slot) {
                Some(v) => {
                    let expected = [
                        ((v.lon_pos - ego.lon_pos) / 100.0) as f32,
                        ((v.lat_pos - ego.lat_pos) / road.width()) as f32,
                        (v.lon_speed / 50.0) as f32,
                        (v.lat_speed / 5.0) as f32,
                        (v.accel / 2.6) as f32,
                        v.sigma as f32,
                    ];
                    for (k, want) in expected.iter().enumerate() {
                        assert_eq!(
                            obs.as_slice()[base + k],
                            *want,
                            "case {case}: slot {slot} entry {k}"
                        );
                    }
                }
                None => {
                    for k in 0..6 {
                        assert_eq!(obs.as_slice()[base + k], 0.0, "case {case}: empty slot");
                    }
                }
            }
        }
    }

    println!("criterion 8 (observation conformance): PASS");
}

#[test]
fn criterion_09_comfort_bound_over_episode() {
    let config = SimConfig {
        agent_fraction: 0.5,
        seed: 77,
        ..SimConfig::default()
    };
    let env = EnvConfig::default();
    let road = &config.road;
    let mut state = SimState::new(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(123);

    let mut agent_steps = 0u64;
    for _ in 0..3000 {
        let actions: BTreeMap<u64, AgentAction> = state
            .live_agent_ids()
            .into_iter()
            .map(|id| (id, AgentAction::from_index(rng.random_range(0..5)).unwrap()))
            .collect();
        let ids: Vec<u64> = actions.keys().copied().collect();
        let state_before = state.clone();
        let events = step(&mut state, &actions, &config).unwrap();
        let stats = segment_stats(&state, road);

        for id in ids {
            let b = reward(
                &state_before,
                actions[&id],
                &state,
                id,
                &events,
                &stats,
                road,
                &env,
            )
            .unwrap();
            assert!(
                (-1.0..=0.0).contains(&b.r_c),
                "comfort out of band at step {}: {}",
                state.time_step,
                b.r_c
            );
            let after = state
                .vehicle(id)
                .or_else(|| events.removed_state(id))
                .unwrap();
            let jerk = (after.accel - after.prev_accel) / config.dt;
            assert!(
                jerk.abs() <= JERK_MAX + 1e-9,
                "jerk beyond bound at step {}: {jerk}",
                state.time_step
            );
            agent_steps += 1;
        }
    }
    assert!(
        agent_steps > 1000,
        "expected plenty of agent steps, saw {agent_steps}"
    );
    println!("criterion 9 (comfort bound over a full episode, {agent_steps} agent steps): PASS");
}
