//! Longitudinal (IDM) and lateral (MOBIL) behavior models for human-driven
//! vehicles, plus the stochastic driver-imperfection term.

use rand::Rng;

use crate::road::{LaneChangeDirection, ACCEL_LIMIT};

/// Intelligent driver model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IdmParams {
    /// Desired free-flow speed v0, m/s.
    pub v0: f64,
    /// Desired time headway T, s.
    pub time_headway: f64,
    /// Maximum acceleration, m/s^2. Must not exceed the global 2.6 bound.
    pub a_max: f64,
    /// Comfortable deceleration b, m/s^2.
    pub b_comfort: f64,
    /// Minimum standstill gap s0, m.
    pub s0: f64,
    /// Acceleration exponent delta.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 33.528,
            time_headway: 1.5,
            a_max: ACCEL_LIMIT,
            b_comfort: 2.0,
            s0: 2.5,
            delta: 4.0,
        }
    }
}

/// MOBIL lane-change parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilParams {
    /// Politeness factor weighting follower gains, in [0, 1].
    pub politeness: f64,
    /// Net incentive required before a change is worthwhile, m/s^2.
    pub accel_threshold: f64,
    /// Maximum braking the change may impose on the new follower, m/s^2.
    pub safe_decel: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        MobilParams {
            politeness: 0.3,
            accel_threshold: 0.1,
            safe_decel: 2.0,
        }
    }
}

/// One HV kind: body length, imperfection, and its car-following parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverProfile {
    pub body_length: f64,
    pub sigma: f64,
    pub idm: IdmParams,
}

/// Gap and speed of one neighboring vehicle, as seen from the deciding
/// vehicle: leader gaps run from ego front bumper to leader rear bumper,
/// follower gaps from follower front bumper to ego rear bumper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSpeed {
    pub gap: f64,
    pub speed: f64,
}

/// Leader/follower pair for one lane, relative to the deciding vehicle's
/// (hypothetical) position in that lane.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LaneNeighbors {
    pub leader: Option<GapSpeed>,
    pub follower: Option<GapSpeed>,
}

/// IDM acceleration for the given speed and leader situation, clamped to the
/// global bound. A non-positive gap with a leader present returns the
/// emergency floor -2.6. The dynamic part of the desired gap is floored at
/// zero so a faster leader cannot act as a phantom obstacle.
pub fn idm_acceleration(ego_speed: f64, leader: Option<GapSpeed>, p: &IdmParams) -> f64 {
    let free = 1.0 - (ego_speed / p.v0).powf(p.delta);
    let interaction = match leader {
        None => 0.0,
        Some(l) => {
            if l.gap <= 0.0 {
                return -ACCEL_LIMIT;
            }
            let approach = ego_speed - l.speed;
            let dynamic = ego_speed * p.time_headway
                + ego_speed * approach / (2.0 * (p.a_max * p.b_comfort).sqrt());
            let s_star = p.s0 + dynamic.max(0.0);
            (s_star / l.gap).powi(2)
        }
    };
    (p.a_max * (free - interaction)).clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

fn incentive(
    ego_speed: f64,
    ego_body_length: f64,
    current: &LaneNeighbors,
    target: &LaneNeighbors,
    mp: &MobilParams,
    ip: &IdmParams,
) -> Option<f64> {
    // Safety: the follower gaining the ego as its new leader must not be
    // forced to brake harder than safe_decel.
    if let Some(nf) = target.follower {
        let braking = idm_acceleration(
            nf.speed,
            Some(GapSpeed {
                gap: nf.gap,
                speed: ego_speed,
            }),
            ip,
        );
        if braking < -mp.safe_decel {
            return None;
        }
    }

    let own_before = idm_acceleration(ego_speed, current.leader, ip);
    let own_after = idm_acceleration(ego_speed, target.leader, ip);
    let own_gain = own_after - own_before;

    // New follower: currently follows the target-lane leader, afterwards the ego.
    let new_follower_gain = match target.follower {
        None => 0.0,
        Some(nf) => {
            let before_leader = target.leader.map(|l| GapSpeed {
                gap: nf.gap + ego_body_length + l.gap,
                speed: l.speed,
            });
            let before = idm_acceleration(nf.speed, before_leader, ip);
            let after = idm_acceleration(
                nf.speed,
                Some(GapSpeed {
                    gap: nf.gap,
                    speed: ego_speed,
                }),
                ip,
            );
            after - before
        }
    };

    // Old follower: currently follows the ego, afterwards the ego's old leader.
    let old_follower_gain = match current.follower {
        None => 0.0,
        Some(of) => {
            let before = idm_acceleration(
                of.speed,
                Some(GapSpeed {
                    gap: of.gap,
                    speed: ego_speed,
                }),
                ip,
            );
            let after_leader = current.leader.map(|l| GapSpeed {
                gap: of.gap + ego_body_length + l.gap,
                speed: l.speed,
            });
            let after = idm_acceleration(of.speed, after_leader, ip);
            after - before
        }
    };

    Some(own_gain + mp.politeness * (new_follower_gain + old_follower_gain))
}

/// MOBIL discretionary lane-change decision.
///
/// A direction is returned iff the new follower could still brake within
/// `safe_decel` and the politeness-weighted acceleration incentive exceeds
/// `accel_threshold`. Ties between left and right break toward left.
pub fn mobil_decide(
    ego_speed: f64,
    ego_body_length: f64,
    current: &LaneNeighbors,
    left: Option<&LaneNeighbors>,
    right: Option<&LaneNeighbors>,
    mp: &MobilParams,
    ip: &IdmParams,
) -> Option<LaneChangeDirection> {
    let score = |target: Option<&LaneNeighbors>| {
        target
            .and_then(|t| incentive(ego_speed, ego_body_length, current, t, mp, ip))
            .filter(|&g| g > mp.accel_threshold)
    };
    match (score(left), score(right)) {
        (None, None) => None,
        (Some(_), None) => Some(LaneChangeDirection::Left),
        (None, Some(_)) => Some(LaneChangeDirection::Right),
        (Some(l), Some(r)) => {
            if l >= r {
                Some(LaneChangeDirection::Left)
            } else {
                Some(LaneChangeDirection::Right)
            }
        }
    }
}

/// Stochastic dawdling: imperfection only ever reduces acceleration.
/// Returns clamp(accel - sigma * 2.6 * u, -2.6, 2.6) with u ~ Uniform[0,1).
pub fn apply_imperfection<R: Rng>(accel: f64, sigma: f64, rng: &mut R) -> f64 {
    debug_assert!((0.0..=1.0).contains(&sigma));
    let u: f64 = rng.random();
    (accel - sigma * ACCEL_LIMIT * u).clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}
