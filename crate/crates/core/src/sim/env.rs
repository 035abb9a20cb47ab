use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::sim::collision::OrientedRect;
use crate::sim::geometry::Geometry;
use crate::sim::reward::{base_reward, combine_reward};
use crate::sim::{
    ActionIndex, Flag, GlobalState, LaneId, Observation, PhysicalRow, Preference, PreferenceSampler,
    Role, SocialRow, VehicleState, MAX_SPEED,
};

/// How an episode ended for the ego.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Success,
    Collision,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: GlobalState,
    /// Final reward per agent.
    pub rewards: Vec<f64>,
    pub flags: Vec<Flag>,
    pub episode_done: bool,
    /// Social agents whose vehicle was replaced at the lane entry after this step.
    pub respawned: Vec<bool>,
    pub outcome: Option<EpisodeOutcome>,
}

/// Random draws made while spawning, kept for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpawnRecord {
    /// Nose-to-tail gaps per lane (lower, upper), rear to front.
    pub gaps: [Vec<f64>; 2],
    /// Rear-vehicle offset from the lane entry per lane.
    pub offsets: [f64; 2],
}

/// One running episode of the intersection game.
#[derive(Clone, Debug)]
pub struct Intersection {
    config: ScenarioConfig,
    geometry: Geometry,
    sampler: PreferenceSampler,
    state: GlobalState,
    done: bool,
    spawn_record: SpawnRecord,
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

impl Intersection {
    /// Spawns an episode seeded from `config.seed`.
    pub fn spawn(config: &ScenarioConfig, sampler: PreferenceSampler) -> Result<Intersection> {
        Self::spawn_seeded(config, sampler, config.seed)
    }

    pub fn spawn_seeded(config: &ScenarioConfig, sampler: PreferenceSampler, seed: u64) -> Result<Intersection> {
        config.validate()?;
        sampler.validate()?;
        let n = config.n_social_per_lane;
        let road = 2.0 * config.road_half_length;
        let len = config.vehicle_length;
        let [gap_lo, gap_hi] = config.spawn_gap_range;
        let worst_span = n as f64 * len + n.saturating_sub(1) as f64 * gap_hi;
        if n > 0 && worst_span > road {
            return Err(Error::InfeasibleSpawn(format!(
                "{n} vehicles of length {len} m with gaps up to {gap_hi} m need {worst_span} m, road is {road} m"
            )));
        }
        let geometry = Geometry::new(config);
        let mut rng = rng::stream(seed, &[rng::tag("spawn")]);
        let mut record = SpawnRecord::default();
        let mut social = Vec::with_capacity(2 * n);
        for (li, lane) in [LaneId::Lower, LaneId::Upper].into_iter().enumerate() {
            if n == 0 {
                continue;
            }
            let gaps: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(gap_lo..=gap_hi)).collect();
            let span = n as f64 * len + gaps.iter().sum::<f64>();
            let offset = rng.gen_range(0.0..=(road - span));
            let mut progress = len / 2.0 + offset;
            for k in 0..n {
                social.push(place(&geometry, lane, Role::Social, progress, config.initial_social_speed));
                if k + 1 < n {
                    progress += len + gaps[k];
                }
            }
            record.gaps[li] = gaps;
            record.offsets[li] = offset;
        }
        let social = social
            .into_iter()
            .map(|v| (v, sampler.sample(&mut rng)))
            .collect::<Vec<_>>();
        let ego = place(&geometry, LaneId::EgoApproach, Role::Ego, 0.0, 0.0);
        let state = GlobalState {
            ego,
            flags: vec![Flag::Running; social.len() + 1],
            social,
            step_index: 0,
            rng,
        };
        Ok(Intersection { config: config.clone(), geometry, sampler, state, done: false, spawn_record: record })
    }

    /// Wraps an explicit state, e.g. a scripted probe or a replayed trace line.
    pub fn from_state(config: &ScenarioConfig, sampler: PreferenceSampler, state: GlobalState) -> Result<Intersection> {
        config.validate()?;
        sampler.validate()?;
        if state.flags.len() != state.n_agents() {
            return Err(Error::Contract("flag vector length differs from agent count".into()));
        }
        Ok(Intersection {
            geometry: Geometry::new(config),
            config: config.clone(),
            sampler,
            done: state.step_index >= config.timeout_steps,
            state,
            spawn_record: SpawnRecord::default(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn spawn_record(&self) -> &SpawnRecord {
        &self.spawn_record
    }

    pub fn sampler(&self) -> &PreferenceSampler {
        &self.sampler
    }

    pub fn n_agents(&self) -> usize {
        self.state.n_agents()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Observation of agent `viewer`: physical rows for the ego, physical
    /// rows plus preferences (ego slot zeroed) for social agents.
    pub fn observe(&self, viewer: usize) -> Result<Observation> {
        observe(&self.state, viewer)
    }

    fn footprint(&self, v: &VehicleState) -> OrientedRect {
        let heading = self.geometry.track(v.lane).tangent(v.track_progress);
        OrientedRect::new(v.position(), heading, self.config.vehicle_length, self.config.vehicle_width)
    }

    /// Advances one `dt`. Positions move by the current velocity; speeds then
    /// track the desired speed under the acceleration limit and velocities are
    /// re-aligned with the track tangent.
    pub fn step(&mut self, actions: &[ActionIndex]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let n_agents = self.n_agents();
        if actions.len() != n_agents {
            return Err(Error::Contract(format!("expected {n_agents} actions, got {}", actions.len())));
        }
        let dt = self.config.dt;
        let dv_max = self.config.max_accel * dt;
        for (agent, action) in actions.iter().enumerate() {
            let v = *self.state.vehicle(agent);
            let speed = v.speed();
            let progress = v.track_progress + speed * dt;
            let target = action.desired_speed();
            let new_speed = (speed + (target - speed).clamp(-dv_max, dv_max)).clamp(0.0, MAX_SPEED);
            let t = self.geometry.track(v.lane).tangent(progress);
            let out = self.state.vehicle_mut(agent);
            out.position_x = v.position_x + v.velocity_x * dt;
            out.position_y = v.position_y + v.velocity_y * dt;
            out.track_progress = progress;
            out.velocity_x = new_speed * t[0];
            out.velocity_y = new_speed * t[1];
        }
        self.state.step_index += 1;

        // flags: fail (collision or off-road) takes precedence over goal
        let rects: Vec<OrientedRect> =
            (0..n_agents).map(|a| self.footprint(self.state.vehicle(a))).collect();
        let mut fail = vec![false; n_agents];
        let reach = (self.config.vehicle_length.hypot(self.config.vehicle_width)) + 1e-9;
        for a in 0..n_agents {
            for b in a + 1..n_agents {
                let (ca, cb) = (rects[a].center, rects[b].center);
                if (ca[0] - cb[0]).abs() > reach || (ca[1] - cb[1]).abs() > reach {
                    continue;
                }
                if rects[a].overlaps(&rects[b]) {
                    fail[a] = true;
                    fail[b] = true;
                }
            }
        }
        for (a, f) in fail.iter_mut().enumerate() {
            let v = self.state.vehicle(a);
            if self.geometry.track(v.lane).lateral_distance(v.position()) > self.config.offroad_tolerance {
                *f = true;
            }
        }
        for a in 0..n_agents {
            let v = self.state.vehicle(a);
            let goal = v.track_progress >= self.geometry.track(v.lane).length();
            self.state.flags[a] = if fail[a] {
                Flag::Fail
            } else if goal {
                Flag::Goal
            } else {
                Flag::Running
            };
        }

        let ego_base = base_reward(&self.config, &self.state, 0);
        let rewards: Vec<f64> = (0..n_agents)
            .map(|a| {
                if a == 0 {
                    ego_base
                } else {
                    let own = base_reward(&self.config, &self.state, a);
                    combine_reward(own, ego_base, Some(self.state.social[a - 1].1 .0))
                }
            })
            .collect();
        let flags = self.state.flags.clone();

        let outcome = match flags[0] {
            Flag::Goal => Some(EpisodeOutcome::Success),
            Flag::Fail => Some(EpisodeOutcome::Collision),
            Flag::Running if self.state.step_index >= self.config.timeout_steps => Some(EpisodeOutcome::Timeout),
            Flag::Running => None,
        };
        self.done = outcome.is_some();

        let mut respawned = vec![false; n_agents];
        if !self.done {
            for a in 1..n_agents {
                if flags[a] != Flag::Running {
                    self.respawn(a);
                    respawned[a] = true;
                }
            }
        }

        Ok(StepOutcome {
            next_state: self.state.clone(),
            rewards,
            flags,
            episode_done: self.done,
            respawned,
            outcome,
        })
    }

    /// Replaces a finished social vehicle behind the rearmost vehicle of its
    /// lane, at the lane entry or further back when the entry is occupied.
    fn respawn(&mut self, agent: usize) {
        let lane = self.state.social[agent - 1].0.lane;
        let [lo, hi] = self.config.spawn_gap_range;
        let gap = self.state.rng.gen_range(lo..=hi);
        let rear = self
            .state
            .social
            .iter()
            .enumerate()
            .filter(|(i, (v, _))| i + 1 != agent && v.lane == lane)
            .map(|(_, (v, _))| v.track_progress)
            .fold(f64::INFINITY, f64::min);
        let progress = if rear.is_finite() {
            (rear - self.config.vehicle_length - gap).min(0.0)
        } else {
            0.0
        };
        let beta = self.sampler.sample(&mut self.state.rng);
        let v = place(&self.geometry, lane, Role::Social, progress, self.config.initial_social_speed);
        self.state.social[agent - 1] = (v, beta);
        self.state.flags[agent] = Flag::Running;
    }
}

pub(crate) fn observe(state: &GlobalState, viewer: usize) -> Result<Observation> {
    let n = state.n_agents();
    if viewer >= n {
        return Err(Error::Contract(format!("viewer {viewer} out of range for {n} agents")));
    }
    if viewer == 0 {
        let rows = (0..n).map(|a| PhysicalRow::from(state.vehicle(a))).collect();
        return Ok(Observation::Ego { rows });
    }
    let rows = (0..n)
        .map(|a| SocialRow {
            physical: PhysicalRow::from(state.vehicle(a)),
            preference: state.preference(a).map_or(0.0, |p: Preference| p.0),
        })
        .collect();
    Ok(Observation::Social { viewer, rows })
}
