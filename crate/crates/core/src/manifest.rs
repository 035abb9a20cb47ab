//! Run manifests: one `manifest.json` per artifact directory, recording
//! everything needed to regenerate that directory's artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::train::{Guidance, StageJob};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "gmrl-manifest/1";

/// Which policy an evaluation probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTarget {
    Guiding,
    Meta,
    MetaWog,
}

/// The command that produced a directory, with every option that affects
/// its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Train {
        job: StageJob,
        budget_scale: f64,
        max_iterations: Option<usize>,
        reg_weight: Option<f64>,
    },
    EvalKl {
        run_dir: PathBuf,
        policy: Guidance,
        samples: usize,
    },
    EvalSweep {
        run_dir: PathBuf,
        policy: Guidance,
        steps: usize,
    },
    EvalProbe {
        run_dir: PathBuf,
        policy: ProbeTarget,
    },
    EvalCross {
        run_dir: PathBuf,
        episodes: usize,
        seeds: Vec<u64>,
        traces: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    /// Name of the artifact directory's content, e.g. `meta` or `eval-cross`.
    pub stage: String,
    pub invocation: Invocation,
    pub seed: u64,
    pub config_hash: String,
    /// The effective config after command-line overrides.
    pub config: Config,
    pub code_version: String,
    /// Checkpoints read.
    pub inputs: Vec<PathBuf>,
    /// Files written next to this manifest.
    pub outputs: Vec<String>,
    pub workers: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(stage: &str, invocation: Invocation, seed: u64, config: &Config, workers: usize) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            stage: stage.to_string(),
            invocation,
            seed,
            config_hash: config.hash(),
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            workers,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported manifest format `{}`", m.format)));
        }
        if m.config.hash() != m.config_hash {
            return Err(Error::InvalidConfig("manifest config does not match its hash".into()));
        }
        Ok(m)
    }
}
