//! Episode traces as JSON lines.
//!
//! One line per step, fields in this order:
//!
//! ```text
//! {"episode": u64, "step": usize,
//!  "agents": [{"id", "role", "lane", "x", "y", "vx", "vy", "progress",
//!              "beta", "action", "reward", "flag"}, ...],
//!  "done": bool}
//! ```
//!
//! Agent fields hold the state *before* the step, the action taken, and the
//! reward and flag the step produced. `beta` is `null` for the ego.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::{
    ActionIndex, Flag, GlobalState, Intersection, LaneId, Preference, PreferenceSampler, Role,
    StepOutcome, VehicleState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceAgent {
    pub id: usize,
    pub role: Role,
    pub lane: LaneId,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub progress: f64,
    pub beta: Option<f64>,
    pub action: ActionIndex,
    pub reward: f64,
    pub flag: Flag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub episode: u64,
    pub step: usize,
    pub agents: Vec<TraceAgent>,
    pub done: bool,
}

impl TraceLine {
    pub fn new(episode: u64, before: &GlobalState, actions: &[ActionIndex], out: &StepOutcome) -> TraceLine {
        let agents = (0..before.n_agents())
            .map(|a| {
                let v = before.vehicle(a);
                TraceAgent {
                    id: a,
                    role: v.role,
                    lane: v.lane,
                    x: v.position_x,
                    y: v.position_y,
                    vx: v.velocity_x,
                    vy: v.velocity_y,
                    progress: v.track_progress,
                    beta: before.preference(a).map(|p| p.0),
                    action: actions[a],
                    reward: out.rewards[a],
                    flag: out.flags[a],
                }
            })
            .collect();
        TraceLine { episode, step: before.step_index, agents, done: out.episode_done }
    }

    fn vehicle(&self, a: usize) -> VehicleState {
        let t = &self.agents[a];
        VehicleState {
            position_x: t.x,
            position_y: t.y,
            velocity_x: t.vx,
            velocity_y: t.vy,
            track_progress: t.progress,
            role: t.role,
            lane: t.lane,
        }
    }

    /// Rebuilds the pre-step state recorded on this line.
    pub fn state(&self) -> GlobalState {
        let social = (1..self.agents.len())
            .map(|a| (self.vehicle(a), Preference(self.agents[a].beta.unwrap_or(0.0))))
            .collect();
        GlobalState {
            ego: self.vehicle(0),
            social,
            flags: vec![Flag::Running; self.agents.len()],
            step_index: self.step,
            rng: crate::rng::stream(self.episode, &[]),
        }
    }
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out }
    }

    pub fn write(&mut self, line: &TraceLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceLine>> {
    let mut lines = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line)?);
    }
    Ok(lines)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub episodes: usize,
    pub steps_verified: usize,
}

/// Re-simulates every recorded transition and checks it reproduces the next
/// line of the same episode bit for bit. Lines of concurrently simulated
/// episodes may be interleaved. Vehicles that respawned are skipped, since
/// their new placement comes from the episode's random stream.
pub fn replay(cfg: &ScenarioConfig, lines: &[TraceLine]) -> Result<ReplaySummary> {
    let mut order: Vec<u64> = Vec::new();
    let mut episodes: std::collections::HashMap<u64, Vec<&TraceLine>> = std::collections::HashMap::new();
    for line in lines {
        episodes
            .entry(line.episode)
            .or_insert_with(|| {
                order.push(line.episode);
                Vec::new()
            })
            .push(line);
    }
    let mut summary = ReplaySummary { episodes: order.len(), steps_verified: 0 };
    for episode in order {
        let lines = &episodes[&episode];
        for (k, line) in lines.iter().enumerate() {
            let mismatch = |detail: String| Error::ReplayMismatch { step: line.step, detail };
            let mut env = Intersection::from_state(cfg, PreferenceSampler::Fixed(0.0), line.state())?;
            let actions: Vec<ActionIndex> = line.agents.iter().map(|a| a.action).collect();
            let out = env.step(&actions)?;
            for (a, rec) in line.agents.iter().enumerate() {
                if out.flags[a] != rec.flag {
                    return Err(mismatch(format!("agent {a} flag {:?} vs recorded {:?}", out.flags[a], rec.flag)));
                }
                if out.rewards[a].to_bits() != rec.reward.to_bits() {
                    return Err(mismatch(format!("agent {a} reward {} vs recorded {}", out.rewards[a], rec.reward)));
                }
            }
            if out.episode_done != line.done {
                return Err(mismatch("episode end differs".into()));
            }
            match lines.get(k + 1) {
                Some(_) if line.done => return Err(mismatch("lines continue after the episode ended".into())),
                Some(next) => {
                    if next.step != line.step + 1 {
                        return Err(mismatch(format!("step gap to {}", next.step)));
                    }
                    for a in 0..line.agents.len() {
                        if a > 0 && out.flags[a] != Flag::Running {
                            continue;
                        }
                        if out.next_state.vehicle(a) != &next.vehicle(a) {
                            return Err(mismatch(format!("agent {a} state differs from next line")));
                        }
                    }
                }
                None => {}
            }
            summary.steps_verified += 1;
        }
    }
    Ok(summary)
}
