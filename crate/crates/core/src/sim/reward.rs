use crate::config::ScenarioConfig;
use crate::sim::{Flag, GlobalState};

/// Goal and fail are exclusive by construction of [`Flag`]; the step
/// function resolves a simultaneous goal and collision to `Fail`.
pub fn base_reward(cfg: &ScenarioConfig, state: &GlobalState, agent: usize) -> f64 {
    match state.flags[agent] {
        Flag::Goal => cfg.r_goal,
        Flag::Fail => cfg.r_fail,
        Flag::Running => cfg.r_speed * state.vehicle(agent).speed(),
    }
}

/// Social reward: own base reward plus the ego's base reward weighted by the
/// preference. `beta = None` marks the ego, whose final reward is its base reward.
pub fn combine_reward(own_base: f64, ego_base: f64, beta: Option<f64>) -> f64 {
    match beta {
        None => ego_base,
        Some(b) => own_base + b * ego_base,
    }
}

pub fn final_reward(cfg: &ScenarioConfig, state: &GlobalState, agent: usize) -> f64 {
    let ego_base = base_reward(cfg, state, 0);
    if agent == 0 {
        return ego_base;
    }
    let beta = state.preference(agent).map(|p| p.0);
    combine_reward(base_reward(cfg, state, agent), ego_base, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Intersection, PreferenceSampler};

    fn state_with(flags: Vec<Flag>, beta: f64) -> (ScenarioConfig, GlobalState) {
        let mut cfg = ScenarioConfig::default();
        cfg.n_social_per_lane = 1;
        let env = Intersection::spawn(&cfg, PreferenceSampler::Fixed(beta)).unwrap();
        let mut s = env.state().clone();
        s.flags = flags;
        (cfg, s)
    }

    #[test]
    fn case_dispatch() {
        let (cfg, s) = state_with(vec![Flag::Goal, Flag::Fail, Flag::Running], 0.0);
        assert_eq!(base_reward(&cfg, &s, 0), 2.0);
        assert_eq!(base_reward(&cfg, &s, 1), -2.0);
        // social spawns cruising at 3.0 m/s
        assert!((base_reward(&cfg, &s, 2) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn preference_weighting() {
        let (cfg, s) = state_with(vec![Flag::Goal, Flag::Running, Flag::Running], 2.0);
        assert!((final_reward(&cfg, &s, 1) - 4.03).abs() < 1e-12);
        let (cfg, s) = state_with(vec![Flag::Goal, Flag::Running, Flag::Running], -1.0);
        assert!((final_reward(&cfg, &s, 1) + 1.97).abs() < 1e-12);
        let (cfg, s) = state_with(vec![Flag::Goal, Flag::Running, Flag::Running], 0.0);
        assert_eq!(final_reward(&cfg, &s, 1), base_reward(&cfg, &s, 1));
        assert_eq!(final_reward(&cfg, &s, 0), 2.0);
    }
}
