//! Mean social reward as a function of the preference.

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::eval::batch_mean_stderr;
use crate::nets::PolicyNet;
use crate::rng;
use crate::sim::PreferenceSampler;
use crate::train::rollout::{EgoDriver, HeadRule, Recorder, Runner, RunnerSpec, SocialDriver, SocialSetup};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub beta: f64,
    /// Mean per-step final reward of the social vehicles.
    pub mean_reward: f64,
    /// Batch-means standard error.
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub policy: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "policy,seed,beta,mean_reward,stderr,samples";

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| format!("{},{},{},{},{},{}", self.policy, self.seed, p.beta, p.mean_reward, p.stderr, p.samples))
            .collect()
    }

    pub fn at(&self, beta: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.beta == beta)
    }
}

/// Runs every social vehicle on `policy` at each grid preference against
/// the frozen ego and averages the social vehicles' per-step rewards over
/// `steps` vehicle-steps.
pub fn sweep_preference_reward(
    cfg: &Config,
    name: &str,
    policy: &PolicyNet<f32>,
    ego: &PolicyNet<f32>,
    grid: &[f64],
    steps: usize,
    seed: u64,
) -> Result<SweepReport> {
    let mut points = Vec::with_capacity(grid.len());
    for &beta in grid {
        let spec = RunnerSpec {
            config: cfg,
            ego: EgoDriver::Policy { net: ego, greedy: false },
            mix: vec![(
                1.0,
                SocialSetup {
                    name: name.to_string(),
                    driver: SocialDriver::Policy { net: policy, heads: HeadRule::Fixed(0), greedy: false },
                    sampler: PreferenceSampler::Fixed(beta),
                },
            )],
            reference: None,
            record: Recorder::Social,
            full_records: false,
            harvest_windows: false,
            n_envs: cfg.ppo.n_envs,
            seed,
            stream_tag: rng::derive_seed(rng::tag("eval-sweep"), &[beta.to_bits()]),
        };
        let batch = Runner::new(spec)?.collect_light(None, steps)?;
        let rewards: Vec<f64> = batch.records.iter().map(|r| r.reward).collect();
        let (mean_reward, stderr) = batch_mean_stderr(&rewards, cfg.eval.sweep_batches);
        points.push(CurvePoint { beta, mean_reward, stderr, samples: rewards.len() });
    }
    Ok(SweepReport { policy: name.to_string(), seed, points })
}
