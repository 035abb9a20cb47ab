//! Success, collision and timeout rates of each trained ego against every
//! traffic family, with one JSONL trace per (ego, family, seed). Needs a
//! trained run (see `train_pipeline`).
//!
//! ```text
//! cargo run --release --example cross_eval -- [run-dir] [episodes] [workers]
//! ```

use std::path::PathBuf;

use gmrl::app::{self, Session};
use gmrl::config::Config;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = PathBuf::from(args.next().unwrap_or_else(|| "runs/pipeline".into()));
    let episodes: usize = args.next().map_or(Ok(50), |s| s.parse())?;
    let workers: usize = args.next().map_or(Ok(1), |s| s.parse())?;
    let s = Session { config: Config::default(), seed: 0, out: run.clone(), workers };
    let r = app::eval_cross(&s, &run, episodes, &[0, 1], true)?;
    for c in &r.cells {
        println!(
            "{:<9} vs {:<12} success {:.3}  collision {:.3}  timeout {:.3}{}",
            c.ego,
            c.family.name(),
            c.success_rate,
            c.collision_rate,
            c.timeout_rate,
            if c.ood { "  (ood)" } else { "" }
        );
    }
    println!("traces in {}", run.join("eval-cross/traces").display());
    Ok(())
}
