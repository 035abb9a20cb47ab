//! Intelligent Driver Model social vehicles, adapted to the discrete
//! desired-speed action set.

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::collision::OrientedRect;
use crate::sim::{ActionIndex, Geometry, Observation, Role, MAX_SPEED};

/// Deceleration commanded when the gap has closed: enough to request a stop
/// from any admissible speed within one step. The low-level controller still
/// applies its own acceleration limit.
pub const EMERGENCY_DECEL: f64 = MAX_SPEED / 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    pub yields_to_ego: bool,
}

fn default_exponent() -> f64 {
    4.0
}

impl IdmParams {
    pub fn conservative() -> IdmParams {
        IdmParams {
            desired_speed: 3.0,
            time_headway: 1.5,
            min_gap: 3.0,
            max_accel: 2.0,
            comfort_decel: 3.0,
            exponent: 4.0,
            yields_to_ego: true,
        }
    }

    pub fn aggressive() -> IdmParams {
        IdmParams {
            desired_speed: 3.0,
            time_headway: 0.5,
            min_gap: 1.5,
            max_accel: 2.0,
            comfort_decel: 3.0,
            exponent: 4.0,
            yields_to_ego: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.desired_speed,
            self.time_headway,
            self.min_gap,
            self.max_accel,
            self.comfort_decel,
            self.exponent,
        ];
        if vals.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("IDM parameters must be positive: {self:?}")))
        }
    }
}

/// IDM acceleration. `gap` is bumper to bumper; `f64::INFINITY` means no
/// leader. A closed gap returns [`EMERGENCY_DECEL`] braking.
pub fn idm_accel(speed: f64, gap: f64, leader_speed: f64, p: &IdmParams) -> f64 {
    if gap <= 0.0 {
        return -EMERGENCY_DECEL;
    }
    let free = 1.0 - (speed / p.desired_speed).powf(p.exponent);
    let interaction = if gap.is_finite() {
        let dv = speed - leader_speed;
        let s_star = p.min_gap + speed * p.time_headway + speed * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
        (s_star.max(0.0) / gap).powi(2)
    } else {
        0.0
    };
    (p.max_accel * (free - interaction)).clamp(-EMERGENCY_DECEL, p.max_accel)
}

/// Leader candidate as seen along the viewer's lane.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Leader {
    gap: f64,
    speed: f64,
}

/// Rule-based controller for a social viewer.
///
/// The leader is the nearest same-lane vehicle ahead. The ego joins the
/// candidates when its footprint intrudes into the viewer's lane corridor
/// ahead (yielding drivers) or when its center is inside the corridor ahead
/// (every driver). The most restrictive candidate acceleration is integrated
/// over one step and snapped to the nearest desired speed, ties low.
pub fn idm_policy(obs: &Observation, cfg: &ScenarioConfig, geometry: &Geometry, p: &IdmParams) -> Result<ActionIndex> {
    let viewer = match obs {
        Observation::Social { viewer, .. } => *viewer,
        Observation::Ego { .. } => {
            return Err(Error::Contract("IDM controls social vehicles only".into()));
        }
    };
    let me = obs.physical(viewer);
    let lane = geometry.lane_at(me.y);
    let dir = geometry.lane_direction(lane);
    let (y_lo, y_hi) = geometry.corridor(lane).expect("horizontal lane");
    let speed = me.vx.hypot(me.vy);
    let half_len = cfg.vehicle_length / 2.0;

    let mut leaders: Vec<Leader> = Vec::new();
    let mut nearest_social: Option<Leader> = None;
    for row in 0..obs.n_rows() {
        if row == viewer {
            continue;
        }
        let other = obs.physical(row);
        match other.role {
            Role::Social => {
                if geometry.lane_at(other.y) != lane {
                    continue;
                }
                let ahead = (other.x - me.x) * dir;
                if ahead <= 0.0 {
                    continue;
                }
                let cand = Leader { gap: ahead - cfg.vehicle_length, speed: other.vx * dir };
                if nearest_social.map_or(true, |l| cand.gap < l.gap) {
                    nearest_social = Some(cand);
                }
            }
            Role::Ego => {
                let progress = geometry.ego.project([other.x, other.y]);
                let heading = geometry.ego.tangent(progress);
                let rect = OrientedRect::new([other.x, other.y], heading, cfg.vehicle_length, cfg.vehicle_width);
                let corners = rect.corners();
                let (min_y, max_y) = corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    (lo.min(c[1]), hi.max(c[1]))
                });
                let intrudes = max_y > y_lo && min_y < y_hi;
                let center_in = other.y > y_lo && other.y < y_hi;
                let gated = if p.yields_to_ego { intrudes } else { center_in };
                if !gated {
                    continue;
                }
                let proj: Vec<f64> = corners.iter().map(|c| (c[0] - me.x) * dir).collect();
                let far = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if far <= half_len {
                    continue; // entirely beside or behind the viewer's nose
                }
                let near = proj.iter().cloned().fold(f64::INFINITY, f64::min);
                leaders.push(Leader { gap: near - half_len, speed: other.vx * dir });
            }
        }
    }
    leaders.extend(nearest_social);

    let accel = leaders
        .iter()
        .map(|l| idm_accel(speed, l.gap, l.speed, p))
        .fold(idm_accel(speed, f64::INFINITY, 0.0, p), f64::min);
    let target = if accel <= -EMERGENCY_DECEL {
        0.0
    } else {
        (speed + accel * cfg.dt).max(0.0)
    };
    Ok(ActionIndex::nearest(target))
}
