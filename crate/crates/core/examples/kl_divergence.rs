//! How closely the meta-policy follows the nearest guide, with and without
//! guidance during training. Needs a trained run (see `train_pipeline`).
//!
//! ```text
//! cargo run --release --example kl_divergence -- [run-dir] [samples]
//! ```

use std::path::PathBuf;

use gmrl::app::{self, Session};
use gmrl::config::Config;
use gmrl::train::Guidance;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = PathBuf::from(args.next().unwrap_or_else(|| "runs/pipeline".into()));
    let samples: usize = args.next().map_or(Ok(2_000), |s| s.parse())?;
    let s = Session { config: Config::default(), seed: 0, out: run.clone(), workers: 1 };
    let guided = app::eval_kl(&s, &run, Guidance::Guided, samples)?;
    let unguided = app::eval_kl(&s, &run, Guidance::Unguided, samples)?;
    println!("{:>6} {:>7} {:>10} {:>10}", "beta", "anchor", "guided", "unguided");
    for (g, u) in guided.points.iter().zip(&unguided.points) {
        println!("{:>6.2} {:>7.2} {:>10.5} {:>10.5}", g.beta, g.anchor, g.kl, u.kl);
    }
    Ok(())
}
