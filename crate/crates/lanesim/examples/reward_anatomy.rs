//! Walk through the reward decomposition on hand-built scenes: free flow,
//! tailgating, a lane change past a close neighbor, a collision, and the
//! invalid lane-change penalties.
//!
//!     cargo run --release --example reward_anatomy

use lanesim::env::{reward, AgentAction, EnvConfig, RewardBreakdown};
use lanesim::road::{lateral_center, LaneChangeDirection, Maneuver, VehicleKind, VehicleState};
use lanesim::sim::{segment_stats, CollisionEvent, SimConfig, SimState, StepEvents};

fn vehicle(id: u64, kind: VehicleKind, lane: usize, lon: f64, speed: f64) -> VehicleState {
    let road = lanesim::road::RoadSegment::default();
    VehicleState {
        id,
        kind,
        lon_pos: lon,
        lat_pos: lateral_center(lane, &road),
        lon_speed: speed,
        lat_speed: 0.0,
        accel: 0.0,
        prev_accel: 0.0,
        lane,
        maneuver: None,
        body_length: 5.0,
        sigma: 0.0,
        desired_speed: road.v_max,
    }
}

fn show(label: &str, b: &RewardBreakdown) {
    println!(
        "{label:<34} g_e {:+.3}  l_e {:+.3}  l_lon {:+.3}  l_lat {:+.3}  l_col {:+.1}  \
r_c {:+.3}  r_u {:+.1}  total {:+.3}",
        b.g_e, b.l_e, b.l_lon, b.l_lat, b.l_col, b.r_c, b.r_u, b.total
    );
}

fn evaluate(
    before: &SimState,
    action: AgentAction,
    after: &SimState,
    events: &StepEvents,
) -> RewardBreakdown {
    let config = SimConfig::default();
    let env = EnvConfig::default();
    let stats = segment_stats(after, &config.road);
    reward(before, action, after, 0, events, &stats, &config.road, &env).unwrap()
}

fn main() {
    let config = SimConfig::default();
    let road = &config.road;
    let no_events = StepEvents::default();

    // cruising alone at the speed limit
    let mut state = SimState::new(&config);
    state
        .vehicles
        .push(vehicle(0, VehicleKind::Av, 2, 1200.0, road.v_max));
    let b = evaluate(&state, AgentAction::Keep, &state, &no_events);
    show("free flow at the limit", &b);

    // crawling in congestion
    let mut slow = SimState::new(&config);
    slow.vehicles
        .push(vehicle(0, VehicleKind::Av, 2, 1200.0, 6.0));
    for i in 0..6 {
        slow.vehicles.push(vehicle(
            i + 1,
            VehicleKind::Hv(1),
            2,
            1250.0 + 40.0 * i as f64,
            6.0,
        ));
    }
    let b = evaluate(&slow, AgentAction::Keep, &slow, &no_events);
    show("congested crawl", &b);

    // tailgating: headway under the 2.5 m threshold
    let mut tight = SimState::new(&config);
    tight
        .vehicles
        .push(vehicle(0, VehicleKind::Av, 2, 1200.0, 25.0));
    tight
        .vehicles
        .push(vehicle(1, VehicleKind::Hv(1), 2, 1206.5, 25.0)); // 1.5 m gap
    let b = evaluate(&tight, AgentAction::Keep, &tight, &no_events);
    show("tailgating (1.5 m headway)", &b);

    // mid lane change with a vehicle beside the target slot
    let mut changing = SimState::new(&config);
    let mut ego = vehicle(0, VehicleKind::Av, 2, 1200.0, 28.0);
    let mut maneuver = Maneuver::new(LaneChangeDirection::Left, 10);
    maneuver.steps_done = 3;
    ego.maneuver = Some(maneuver);
    ego.lat_pos = lateral_center(2, road) + 0.3 * road.lane_width;
    ego.lat_speed = 3.2;
    changing.vehicles.push(ego);
    changing
        .vehicles
        .push(vehicle(1, VehicleKind::Hv(0), 3, 1204.0, 28.0));
    let b = evaluate(&changing, AgentAction::Keep, &changing, &no_events);
    show("lane change past close neighbor", &b);

    // harsh jerk: full swing of the acceleration range in one step
    let mut jerky = SimState::new(&config);
    let mut ego = vehicle(0, VehicleKind::Av, 2, 1200.0, 25.0);
    ego.prev_accel = -2.6;
    ego.accel = 2.6;
    jerky.vehicles.push(ego);
    let b = evaluate(&jerky, AgentAction::Keep, &jerky, &no_events);
    show("maximal jerk", &b);

    // collision: ego removed this step
    let mut before = SimState::new(&config);
    before
        .vehicles
        .push(vehicle(0, VehicleKind::Av, 2, 1200.0, 25.0));
    before
        .vehicles
        .push(vehicle(1, VehicleKind::Hv(2), 2, 1206.0, 10.0));
    let after = SimState::new(&config);
    let mut events = StepEvents::default();
    events.collisions.push(CollisionEvent {
        ids: (0, 1),
        lon_pos: 1206.8,
    });
    events
        .removed
        .push(vehicle(0, VehicleKind::Av, 2, 1202.4, 24.0));
    events
        .removed
        .push(vehicle(1, VehicleKind::Hv(2), 2, 1206.8, 10.0));
    let b = evaluate(&before, AgentAction::Keep, &after, &events);
    show("collision", &b);

    // invalid lane-change decisions
    let mut leftmost = SimState::new(&config);
    leftmost.vehicles.push(vehicle(
        0,
        VehicleKind::Av,
        road.leftmost_lane(),
        1200.0,
        25.0,
    ));
    let b = evaluate(&leftmost, AgentAction::Left, &leftmost, &no_events);
    show("left from the leftmost lane", &b);

    let mut empty_road = SimState::new(&config);
    empty_road
        .vehicles
        .push(vehicle(0, VehicleKind::Av, 2, 1200.0, 25.0));
    let b = evaluate(&empty_road, AgentAction::Right, &empty_road, &no_events);
    show("lane change with nobody ahead", &b);
}
