//! Desired speed chosen by a social policy at a scripted merge moment.
//!
//! The probe state has the ego halfway through its left turn, about to
//! enter the upper lane, and the probed vehicle approaching in that lane
//! 10 m behind the merge point at full speed. The lower lane's vehicles
//! have already cleared the intersection and two more upper-lane vehicles
//! follow the probed one. Before reading the decision, the scene runs for
//! a few steps with every vehicle cruising so the policy's recurrent state
//! has seen the approach.

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::nets::{EncodedObs, PolicyNet, SetBatch};
use crate::rng;
use crate::sim::{
    ActionIndex, Flag, Geometry, GlobalState, Intersection, LaneId, Preference, PreferenceSampler, Role,
    VehicleState, ACTION_SPEEDS,
};
use crate::train::rollout::HeadRule;

/// Scripted steps before the decision is read.
pub const WARMUP_STEPS: usize = 5;
/// Agent index of the probed vehicle.
pub const PROBED_AGENT: usize = 1;

const EGO_PROGRESS: f64 = 12.0;
/// x positions at the decision moment.
const UPPER_X: [f64; 3] = [8.0, 16.0, 24.0];
const LOWER_X: [f64; 3] = [8.0, 15.0, 22.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbePoint {
    pub beta: f64,
    pub action: usize,
    pub desired_speed: f64,
    pub probs: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub policy: String,
    pub points: Vec<ProbePoint>,
}

impl ProbeReport {
    pub const CSV_HEADER: &'static str = "policy,beta,action,desired_speed,p_stop,p_creep,p_cruise";

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{},{}",
                    self.policy, p.beta, p.action, p.desired_speed, p.probs[0], p.probs[1], p.probs[2]
                )
            })
            .collect()
    }

    pub fn speed_at(&self, beta: f64) -> Option<f64> {
        self.points.iter().find(|p| p.beta == beta).map(|p| p.desired_speed)
    }
}

fn place(geometry: &Geometry, lane: LaneId, role: Role, progress: f64, speed: f64) -> VehicleState {
    let (p, t) = geometry.track(lane).pose(progress);
    VehicleState {
        position_x: p[0],
        position_y: p[1],
        velocity_x: speed * t[0],
        velocity_y: speed * t[1],
        track_progress: progress,
        role,
        lane,
    }
}

/// The scene `WARMUP_STEPS` before the decision, every vehicle at full speed
/// and every social vehicle at preference `beta`.
pub fn probe_state(cfg: &ScenarioConfig, beta: f64) -> GlobalState {
    let g = Geometry::new(cfg);
    let speed = crate::sim::MAX_SPEED;
    let back = speed * cfg.dt * WARMUP_STEPS as f64;
    let l = cfg.road_half_length;
    let ego = place(&g, LaneId::EgoApproach, Role::Ego, EGO_PROGRESS - back, speed);
    let mut social = Vec::new();
    for x in UPPER_X {
        social.push((place(&g, LaneId::Upper, Role::Social, l - x - back, speed), Preference(beta)));
    }
    for x in LOWER_X {
        social.push((place(&g, LaneId::Lower, Role::Social, x + l - back, speed), Preference(beta)));
    }
    let n = social.len() + 1;
    GlobalState { ego, social, flags: vec![Flag::Running; n], step_index: 0, rng: rng::stream(0, &[rng::tag("probe")]) }
}

/// Greedy desired speed of the probed vehicle for each preference.
pub fn probe_actions(
    cfg: &ScenarioConfig,
    name: &str,
    net: &PolicyNet<f32>,
    heads: HeadRule,
    grid: &[f64],
) -> Result<ProbeReport> {
    let mut points = Vec::with_capacity(grid.len());
    for &beta in grid {
        let head = match heads {
            HeadRule::Fixed(h) => h,
            HeadRule::Anchor => net.anchor_head(beta)?,
        };
        let mut env = Intersection::from_state(cfg, PreferenceSampler::Fixed(beta), probe_state(cfg, beta))?;
        let mut hidden = vec![0.0; net.hidden_width()];
        let cruise = vec![ActionIndex::CRUISE; env.n_agents()];
        let mut output = None;
        for step in 0..=WARMUP_STEPS {
            let obs = EncodedObs::social(&env.observe(PROBED_AGENT)?)?;
            let batch = SetBatch::<f32>::new(&[&obs], &[&hidden], &[beta])?;
            let ev = net.evaluate(&batch, &[head])?;
            hidden = ev.hidden.row(0).iter().map(|&v| v as f64).collect();
            if step == WARMUP_STEPS {
                output = ev.outputs.into_iter().next();
            } else {
                env.step(&cruise)?;
            }
        }
        let out = output.expect("decision step evaluated");
        let action = out.greedy();
        points.push(ProbePoint { beta, action: action.index(), desired_speed: ACTION_SPEEDS[action.index()], probs: out.probs });
    }
    Ok(ProbeReport { policy: name.to_string(), points })
}
