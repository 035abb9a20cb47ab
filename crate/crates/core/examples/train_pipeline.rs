//! Runs every training stage in order for one seed, skipping stages whose
//! manifest shows they were already trained with the same settings.
//!
//! ```text
//! cargo run --release --example train_pipeline -- [run-dir] [seed] [budget-scale]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use gmrl::app::{self, Session, PIPELINE};
use gmrl::config::Config;
use gmrl::train::TrainOptions;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/pipeline".into()));
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let scale: f64 = args.next().map_or(Ok(0.01), |s| s.parse())?;
    let session = Session { config: Config::default(), seed, out, workers: 1 };
    let opts = TrainOptions { budget_scale: scale, ..TrainOptions::default() };
    for job in PIPELINE {
        let t = Instant::now();
        match app::train_if_needed(&session, job, &opts)? {
            Some(report) => println!(
                "{:<14} {:>4} iterations {:>8} records {:>5} episodes ({} idm) in {:.1}s",
                job.dir_name(),
                report.iterations,
                report.records,
                report.episodes,
                report.idm_episodes,
                t.elapsed().as_secs_f64()
            ),
            None => println!("{:<14} already trained", job.dir_name()),
        }
    }
    Ok(())
}
