//! Re-simulates recorded traces and checks every transition reproduces bit
//! for bit.
//!
//! ```text
//! cargo run --release --example replay -- <trace.jsonl>...
//! ```

use gmrl::app;
use gmrl::config::Config;

fn main() -> anyhow::Result<()> {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    anyhow::ensure!(!paths.is_empty(), "usage: replay <trace.jsonl>...");
    let cfg = Config::default();
    for p in &paths {
        let summary = app::replay_trace(&cfg, p.as_ref())?;
        println!("{p}: {} episodes, {} steps verified", summary.episodes, summary.steps_verified);
    }
    Ok(())
}
