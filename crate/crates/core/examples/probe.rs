//! Desired speed of the guiding and meta policies at the scripted merge
//! scene, per preference. Needs a trained run (see `train_pipeline`).
//!
//! ```text
//! cargo run --release --example probe -- [run-dir]
//! ```

use std::path::PathBuf;

use gmrl::app::{self, Session};
use gmrl::config::Config;
use gmrl::manifest::ProbeTarget;

fn main() -> anyhow::Result<()> {
    let run = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/pipeline".into()));
    let s = Session { config: Config::default(), seed: 0, out: run.clone(), workers: 1 };
    for target in [ProbeTarget::Guiding, ProbeTarget::Meta, ProbeTarget::MetaWog] {
        let r = app::eval_probe(&s, &run, target)?;
        let speeds: Vec<String> = r.points.iter().map(|p| format!("{:+.1}→{}", p.beta, p.desired_speed)).collect();
        println!("{:<9} {}", r.policy, speeds.join("  "));
    }
    Ok(())
}
