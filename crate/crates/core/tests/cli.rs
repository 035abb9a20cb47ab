//! End-to-end checks of the `gmrl` binary: exit codes, error lines and the
//! cross-evaluation report against its own traces.

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn gmrl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmrl"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(&path, common::tiny_config().to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_config_accepts_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmrl(dir.path(), &["validate-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("hash"));
}

#[test]
fn invalid_config_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut cfg = common::tiny_config();
    cfg.ppo.clip = -1.0;
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = gmrl(dir.path(), &["--config", path.to_str().unwrap(), "validate-config"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[invalid-config]"), "{}", stderr(&o));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gmrl(dir.path(), &["fly"]).status.code(), Some(2));
}

#[test]
fn meta_without_guides_on_disk_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let o = gmrl(dir.path(), &["--config", &cfg, "train", "meta"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("guiding"), "{}", stderr(&o));
    assert!(!dir.path().join("meta").exists());
}

/// Ego outcome of every episode in a trace: the ego flag on its last line.
fn trace_outcomes(path: &Path) -> HashMap<&'static str, usize> {
    let mut last: HashMap<u64, serde_json::Value> = HashMap::new();
    for line in std::fs::read_to_string(path).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        last.insert(v["episode"].as_u64().unwrap(), v);
    }
    let mut counts = HashMap::new();
    for v in last.values() {
        assert_eq!(v["done"], true, "trace ends mid-episode: {}", path.display());
        let outcome = match v["agents"][0]["flag"].as_str().unwrap() {
            "goal" => "successes",
            "fail" => "collisions",
            _ => "timeouts",
        };
        *counts.entry(outcome).or_insert(0) += 1;
    }
    counts
}

#[test]
fn cross_report_matches_its_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    for stage in [&["ego-initial"][..], &["guiding"], &["meta"], &["meta", "--no-guides"], &["ego-final"]] {
        let mut args = vec!["--config", cfg.as_str(), "--seed", "3", "train"];
        args.extend_from_slice(stage);
        let o = gmrl(dir.path(), &args);
        assert!(o.status.success(), "train {stage:?}: {}", stderr(&o));
    }
    let o = gmrl(
        dir.path(),
        &["--config", &cfg, "--seed", "3", "--workers", "2", "eval", "cross", "--episodes", "10", "--seeds", "2", "--trace"],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let report = std::fs::read_to_string(dir.path().join("eval-cross/report.csv")).unwrap();
    let mut lines = report.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // two egos (no unguided-traffic ego was trained) times four families
    assert_eq!(rows.len(), 2 * 4);
    for row in &rows {
        let (ego, family) = (row[col("ego")], row[col("family")]);
        assert_eq!(row[col("seeds")], "3 4");
        assert_eq!(row[col("episodes")], "20");
        let mut expected: HashMap<&str, usize> = HashMap::new();
        for seed in [3, 4] {
            let trace = dir.path().join(format!("eval-cross/traces/{ego}__{family}__seed{seed}.jsonl"));
            let replay = gmrl(dir.path(), &["--config", &cfg, "replay", trace.to_str().unwrap()]);
            assert!(replay.status.success(), "{}", stderr(&replay));
            assert!(String::from_utf8_lossy(&replay.stdout).starts_with("10 episodes"), "{}", trace.display());
            for (k, n) in trace_outcomes(&trace) {
                *expected.entry(k).or_insert(0) += n;
            }
        }
        for k in ["successes", "collisions", "timeouts"] {
            let got: usize = row[col(k)].parse().unwrap();
            assert_eq!(got, expected.get(k).copied().unwrap_or(0), "{ego} vs {family}: {k}");
        }
    }
}
