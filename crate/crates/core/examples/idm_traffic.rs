//! Rule-based traffic on its own: the ego stays parked while a mix of
//! conservative and aggressive IDM drivers use the through lanes.
//!
//! ```text
//! cargo run --release --example idm_traffic -- [episodes]
//! ```

use gmrl::config::{Config, IDM_AGGRESSIVE, IDM_CONSERVATIVE};
use gmrl::idm::{idm_accel, idm_policy};
use gmrl::sim::{ActionIndex, Flag, Intersection, PreferenceSampler};
use rand::{Rng, SeedableRng};

fn main() -> anyhow::Result<()> {
    let episodes: u64 = std::env::args().nth(1).map_or(Ok(100), |s| s.parse())?;
    let cfg = Config::default();
    let conservative = *cfg.idm.preset(IDM_CONSERVATIVE)?;
    let aggressive = *cfg.idm.preset(IDM_AGGRESSIVE)?;

    println!("acceleration at 3 m/s behind a stopped car:");
    for gap in [2.0, 5.0, 10.0, 20.0] {
        println!(
            "  gap {gap:>4.1} m  conservative {:>7.3}  aggressive {:>7.3}",
            idm_accel(3.0, gap, 0.0, &conservative),
            idm_accel(3.0, gap, 0.0, &aggressive)
        );
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (mut goals, mut failures, mut steps) = (0, 0, 0);
    for e in 0..episodes {
        let mut env = Intersection::spawn_seeded(&cfg.scenario, PreferenceSampler::Fixed(0.0), e)?;
        let styles: Vec<_> = (0..env.n_agents())
            .map(|_| if rng.gen_bool(cfg.idm.conservative_fraction) { &conservative } else { &aggressive })
            .collect();
        while !env.is_done() {
            let mut actions = vec![ActionIndex::STOP];
            for (a, style) in styles.iter().enumerate().skip(1) {
                actions.push(idm_policy(&env.observe(a)?, &cfg.scenario, env.geometry(), style)?);
            }
            let out = env.step(&actions)?;
            steps += 1;
            goals += out.flags.iter().filter(|f| **f == Flag::Goal).count();
            failures += out.flags.iter().filter(|f| **f == Flag::Fail).count();
        }
    }
    println!("{episodes} episodes, {steps} steps: {goals} vehicles crossed, {failures} collisions");
    Ok(())
}
