//! Road geometry and per-vehicle kinematic state shared by every other module.

/// Global acceleration bound in m/s^2. Applies to every vehicle, AV or HV.
pub const ACCEL_LIMIT: f64 = 2.6;

/// Hard physical speed cap in m/s, independent of the posted limit.
/// Exceeding the posted limit is penalized by reward, not forbidden here.
pub const SPEED_CAP: f64 = 50.0;

/// All vehicles share the same width in m; only body length varies by kind.
pub const VEHICLE_WIDTH: f64 = 1.8;

/// Straight multi-lane highway segment. Lane 0 is the rightmost lane and
/// lateral positions are measured from the right road edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    /// Total segment length in m.
    pub total_length: f64,
    /// First stretch reserved for injection/acceleration; statistics and
    /// space-time binning only cover `[warmup_length, total_length)`.
    pub warmup_length: f64,
    pub lane_count: usize,
    /// Lane width in m.
    pub lane_width: f64,
    /// Posted speed limit in m/s.
    pub v_max: f64,
    /// Minimum desired average speed in m/s, used by the efficiency reward.
    pub v_min: f64,
}

impl Default for RoadSegment {
    fn default() -> Self {
        RoadSegment {
            total_length: 3500.0,
            warmup_length: 500.0,
            lane_count: 5,
            lane_width: 3.2,
            v_max: 33.528,  // 75 mph
            v_min: 20.1168, // 45 mph
        }
    }
}

impl RoadSegment {
    /// Panics if the segment violates its structural invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.warmup_length >= self.total_length {
            return Err("warmup_length must be < total_length".into());
        }
        if self.lane_count < 2 {
            return Err("lane_count must be >= 2".into());
        }
        if !(self.v_min > 0.0 && self.v_min < self.v_max) {
            return Err("require 0 < v_min < v_max".into());
        }
        if self.lane_width <= 0.0 || self.total_length <= 0.0 || self.warmup_length < 0.0 {
            return Err("lengths must be positive".into());
        }
        Ok(())
    }

    /// Width of the full carriageway in m.
    pub fn width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width
    }

    /// Length of the evaluation zone (everything past the warmup stretch).
    pub fn eval_zone_length(&self) -> f64 {
        self.total_length - self.warmup_length
    }

    /// Index of the leftmost lane.
    pub fn leftmost_lane(&self) -> usize {
        self.lane_count - 1
    }
}

/// Lateral center of a lane in m from the right road edge.
pub fn lateral_center(lane: usize, road: &RoadSegment) -> f64 {
    assert!(lane < road.lane_count, "lane {lane} out of range");
    (lane as f64 + 0.5) * road.lane_width
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VehicleKind {
    /// RL-controlled autonomous vehicle.
    Av,
    /// Human-driven vehicle; the index selects one of the configured profiles.
    Hv(usize),
}

impl VehicleKind {
    pub fn is_av(&self) -> bool {
        matches!(self, VehicleKind::Av)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChangeDirection {
    Left,
    Right,
}

impl LaneChangeDirection {
    /// Lane-index delta: left is toward higher indices.
    pub fn delta(&self) -> isize {
        match self {
            LaneChangeDirection::Left => 1,
            LaneChangeDirection::Right => -1,
        }
    }
}

/// An in-progress lane change. Progress is tracked in integer sub-steps so a
/// maneuver of duration D completes in exactly ceil(D/dt) steps and the
/// lateral position lands exactly on the target lane center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Maneuver {
    pub direction: LaneChangeDirection,
    pub steps_done: u32,
    pub total_steps: u32,
}

impl Maneuver {
    pub fn new(direction: LaneChangeDirection, total_steps: u32) -> Self {
        assert!(total_steps > 0);
        Maneuver {
            direction,
            steps_done: 0,
            total_steps,
        }
    }

    /// Completed fraction in [0, 1].
    pub fn progress(&self) -> f64 {
        self.steps_done as f64 / self.total_steps as f64
    }

    pub fn is_complete(&self) -> bool {
        self.steps_done >= self.total_steps
    }
}

/// Kinematic and identity record for one vehicle.
///
/// `lon_pos` is the front-bumper longitudinal position from the segment
/// start; gaps between vehicles are bumper-to-bumper. The `lane` field holds
/// the source lane for the first half of a maneuver and switches to the
/// target lane once progress reaches one half.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u64,
    pub kind: VehicleKind,
    pub lon_pos: f64,
    /// Lateral offset of the vehicle center from the right road edge, m.
    pub lat_pos: f64,
    pub lon_speed: f64,
    pub lat_speed: f64,
    /// Most recently applied (effective) acceleration, m/s^2.
    pub accel: f64,
    /// Acceleration applied in the step before, for jerk computation.
    pub prev_accel: f64,
    pub lane: usize,
    pub maneuver: Option<Maneuver>,
    pub body_length: f64,
    /// Driver imperfection in [0, 1]; 0 for AVs.
    pub sigma: f64,
    /// Desired free-flow speed, m/s. Drawn once per vehicle for HVs.
    pub desired_speed: f64,
}

impl VehicleState {
    /// Lane this vehicle is heading to (current lane if not maneuvering).
    pub fn target_lane(&self) -> usize {
        match &self.maneuver {
            Some(m) if m.progress() < 0.5 => (self.lane as isize + m.direction.delta()) as usize,
            _ => self.lane,
        }
    }

    /// Lane the current maneuver started from (current lane if none).
    pub fn source_lane(&self) -> usize {
        match &self.maneuver {
            Some(m) if m.progress() >= 0.5 => (self.lane as isize - m.direction.delta()) as usize,
            _ => self.lane,
        }
    }

    /// Rear-bumper position in m.
    pub fn rear_pos(&self) -> f64 {
        self.lon_pos - self.body_length
    }
}

/// Bumper-to-bumper gap in m; negative values mean longitudinal overlap.
pub fn longitudinal_gap(follower: &VehicleState, leader: &VehicleState) -> f64 {
    debug_assert!(leader.lon_pos >= follower.lon_pos);
    leader.lon_pos - leader.body_length - follower.lon_pos
}

/// Advance one vehicle by `dt` under a commanded acceleration.
///
/// Speed is clamped to [0, SPEED_CAP]; position advances by the trapezoidal
/// rule. The stored `accel` becomes the effective acceleration after
/// clamping (zero while the speed is pinned at a bound) and the previous
/// effective acceleration moves to `prev_accel`.
pub fn advance_kinematics(v: &VehicleState, commanded_accel: f64, dt: f64) -> VehicleState {
    debug_assert!(dt > 0.0);
    let old_speed = v.lon_speed;
    let raw = old_speed + commanded_accel * dt;
    let (new_speed, effective) = if (0.0..=SPEED_CAP).contains(&raw) {
        (raw, commanded_accel)
    } else {
        let clamped = raw.clamp(0.0, SPEED_CAP);
        (clamped, (clamped - old_speed) / dt)
    };
    let mut out = v.clone();
    out.lon_pos += 0.5 * (old_speed + new_speed) * dt;
    out.lon_speed = new_speed;
    out.prev_accel = v.accel;
    out.accel = effective;
    out
}

/// Lanes whose lateral band `[lane*w, (lane+1)*w)` overlaps the vehicle's
/// lateral extent `[lat_pos - w/2, lat_pos + w/2]` (fixed vehicle width).
/// Returns one or two lane indices in ascending order.
pub fn occupied_lanes(v: &VehicleState, road: &RoadSegment) -> Vec<usize> {
    let half = VEHICLE_WIDTH / 2.0;
    let lo = v.lat_pos - half;
    let hi = v.lat_pos + half;
    let w = road.lane_width;
    let mut lanes = Vec::with_capacity(2);
    let first = (lo / w).floor().max(0.0) as usize;
    for lane in first..road.lane_count {
        let band_lo = lane as f64 * w;
        let band_hi = (lane + 1) as f64 * w;
        if lo < band_hi && hi >= band_lo {
            lanes.push(lane);
        }
        if band_lo > hi {
            break;
        }
    }
    lanes
}
