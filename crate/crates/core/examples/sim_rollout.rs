//! One episode at the T-intersection: the ego creeps up to the conflict
//! zone and then cruises, while social vehicles follow rule-based traffic.
//!
//! ```text
//! cargo run --release --example sim_rollout -- [seed]
//! ```

use gmrl::config::{Config, IDM_CONSERVATIVE};
use gmrl::idm::idm_policy;
use gmrl::sim::{ActionIndex, Intersection, PreferenceSampler};

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let cfg = Config::default();
    let style = *cfg.idm.preset(IDM_CONSERVATIVE)?;
    let mut env = Intersection::spawn_seeded(&cfg.scenario, PreferenceSampler::Fixed(0.0), seed)?;
    println!("{} vehicles, ego at {:?}", env.n_agents(), env.state().ego.position());

    let mut ego_return = 0.0;
    loop {
        let step = env.state().step_index;
        let ego = if step < 30 { ActionIndex::CREEP } else { ActionIndex::CRUISE };
        let mut actions = vec![ego];
        for a in 1..env.n_agents() {
            actions.push(idm_policy(&env.observe(a)?, &cfg.scenario, env.geometry(), &style)?);
        }
        let out = env.step(&actions)?;
        ego_return += out.rewards[0];
        if step % 20 == 0 {
            let v = out.next_state.vehicle(0);
            println!("step {step:>3}  ego progress {:>6.2} m  speed {:.2} m/s", v.track_progress, v.speed());
        }
        if let Some(outcome) = out.outcome {
            println!("{outcome:?} after {} steps, ego return {ego_return:.3}", step + 1);
            return Ok(());
        }
    }
}
