//! Discrete-time T-intersection game: one ego vehicle turning left from a
//! vertical approach into the upper lane of a two-lane road, plus a fixed
//! number of social vehicles per lane.

pub mod collision;
mod env;
pub mod geometry;
mod reward;
pub mod trace;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use env::{EpisodeOutcome, Intersection, SpawnRecord, StepOutcome};
pub use geometry::{Geometry, Track};
pub use reward::{base_reward, combine_reward, final_reward};

/// Desired speeds selectable by every agent, m/s.
pub const ACTION_SPEEDS: [f64; 3] = [0.0, 0.5, 3.0];
pub const N_ACTIONS: usize = ACTION_SPEEDS.len();
pub const MAX_SPEED: f64 = 3.0;

/// Index into [`ACTION_SPEEDS`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ActionIndex(u8);

impl ActionIndex {
    pub const STOP: ActionIndex = ActionIndex(0);
    pub const CREEP: ActionIndex = ActionIndex(1);
    pub const CRUISE: ActionIndex = ActionIndex(2);

    pub fn new(i: usize) -> Result<ActionIndex> {
        if i < N_ACTIONS {
            Ok(ActionIndex(i as u8))
        } else {
            Err(Error::Contract(format!("action index {i} out of range")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn desired_speed(self) -> f64 {
        ACTION_SPEEDS[self.0 as usize]
    }

    /// Action whose desired speed is nearest to `speed`; ties go to the lower speed.
    pub fn nearest(speed: f64) -> ActionIndex {
        let mut best = 0;
        for (i, &s) in ACTION_SPEEDS.iter().enumerate().skip(1) {
            if (s - speed).abs() < (ACTION_SPEEDS[best] - speed).abs() {
                best = i;
            }
        }
        ActionIndex(best as u8)
    }
}

impl TryFrom<u8> for ActionIndex {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        ActionIndex::new(v as usize)
    }
}

impl From<ActionIndex> for u8 {
    fn from(a: ActionIndex) -> u8 {
        a.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    Social,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneId {
    Lower,
    Upper,
    EgoApproach,
}

/// Per-agent status after a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Running,
    Goal,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position_x: f64,
    pub position_y: f64,
    pub velocity_x: f64,
    pub velocity_y: f64,
    /// Arc length along the assigned track, meters.
    pub track_progress: f64,
    pub role: Role,
    pub lane: LaneId,
}

impl VehicleState {
    pub fn speed(&self) -> f64 {
        self.velocity_x.hypot(self.velocity_y)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.position_x, self.position_y]
    }
}

/// Aggressiveness preference of a social vehicle. Negative values reward
/// hindering the ego, positive values reward helping it.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Preference(pub f64);

/// Distribution of spawned social-vehicle preferences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceSampler {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
    /// Uniform over a finite set.
    Discrete(Vec<f64>),
}

impl PreferenceSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Preference {
        match self {
            PreferenceSampler::Fixed(b) => Preference(*b),
            PreferenceSampler::Uniform { lo, hi } => Preference(rng.gen_range(*lo..=*hi)),
            PreferenceSampler::Discrete(set) => Preference(set[rng.gen_range(0..set.len())]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PreferenceSampler::Fixed(b) if b.is_finite() => Ok(()),
            PreferenceSampler::Uniform { lo, hi } if lo <= hi && lo.is_finite() && hi.is_finite() => Ok(()),
            PreferenceSampler::Discrete(set) if !set.is_empty() => Ok(()),
            other => Err(Error::InvalidConfig(format!("bad preference sampler {other:?}"))),
        }
    }
}

/// Full game state: the ego, every social vehicle with its preference, the
/// per-agent flags of the last step, and the random stream used for respawns.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalState {
    pub ego: VehicleState,
    pub social: Vec<(VehicleState, Preference)>,
    /// Indexed by agent: 0 is the ego, `i >= 1` is `social[i - 1]`.
    pub flags: Vec<Flag>,
    pub step_index: usize,
    pub rng: rand_chacha::ChaCha8Rng,
}

impl GlobalState {
    pub fn n_agents(&self) -> usize {
        self.social.len() + 1
    }

    pub fn vehicle(&self, agent: usize) -> &VehicleState {
        if agent == 0 {
            &self.ego
        } else {
            &self.social[agent - 1].0
        }
    }

    pub fn vehicle_mut(&mut self, agent: usize) -> &mut VehicleState {
        if agent == 0 {
            &mut self.ego
        } else {
            &mut self.social[agent - 1].0
        }
    }

    /// Preference of a social agent; `None` for the ego.
    pub fn preference(&self, agent: usize) -> Option<Preference> {
        (agent > 0).then(|| self.social[agent - 1].1)
    }
}

/// Physical part of an observation row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalRow {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub role: Role,
}

impl From<&VehicleState> for PhysicalRow {
    fn from(v: &VehicleState) -> Self {
        PhysicalRow { x: v.position_x, y: v.position_y, vx: v.velocity_x, vy: v.velocity_y, role: v.role }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialRow {
    #[serde(flatten)]
    pub physical: PhysicalRow,
    /// Zero in the ego's row.
    pub preference: f64,
}

/// Role-dependent view of the state. Rows are in agent order (ego first).
/// The ego variant has no preference field at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Ego { rows: Vec<PhysicalRow> },
    Social { viewer: usize, rows: Vec<SocialRow> },
}

impl Observation {
    pub fn viewer(&self) -> usize {
        match self {
            Observation::Ego { .. } => 0,
            Observation::Social { viewer, .. } => *viewer,
        }
    }

    pub fn n_rows(&self) -> usize {
        match self {
            Observation::Ego { rows } => rows.len(),
            Observation::Social { rows, .. } => rows.len(),
        }
    }

    pub fn physical(&self, row: usize) -> &PhysicalRow {
        match self {
            Observation::Ego { rows } => &rows[row],
            Observation::Social { rows, .. } => &rows[row].physical,
        }
    }

    pub fn preference(&self, row: usize) -> Option<f64> {
        match self {
            Observation::Ego { .. } => None,
            Observation::Social { rows, .. } => Some(rows[row].preference),
        }
    }
}
