//! Mean social reward across the preference grid for both meta-policies.
//! Needs a trained run (see `train_pipeline`).
//!
//! ```text
//! cargo run --release --example reward_sweep -- [run-dir] [steps-per-beta]
//! ```

use std::path::PathBuf;

use gmrl::app::{self, Session};
use gmrl::config::Config;
use gmrl::train::Guidance;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = PathBuf::from(args.next().unwrap_or_else(|| "runs/pipeline".into()));
    let steps: usize = args.next().map_or(Ok(20_000), |s| s.parse())?;
    let s = Session { config: Config::default(), seed: 0, out: run.clone(), workers: 1 };
    let guided = app::eval_sweep(&s, &run, Guidance::Guided, steps)?;
    let unguided = app::eval_sweep(&s, &run, Guidance::Unguided, steps)?;
    for (g, u) in guided.points.iter().zip(&unguided.points) {
        println!(
            "beta {:>5.2}  guided {:>8.5} ± {:.5}   unguided {:>8.5} ± {:.5}",
            g.beta, g.mean_reward, g.stderr, u.mean_reward, u.stderr
        );
    }
    Ok(())
}
