//! Divergence of the meta-policy from the guiding heads.
//!
//! States come from the evaluated policy's own rollouts: every social
//! vehicle plays the evaluated policy at a fixed preference against the
//! frozen ego, and at each of its steps the guiding head of the nearest
//! anchor (run with its own recurrent state over the same observations)
//! gives the reference distribution.

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::nets::PolicyNet;
use crate::rng;
use crate::sim::PreferenceSampler;
use crate::train::loss::categorical_kl;
use crate::train::rollout::{EgoDriver, HeadRule, Recorder, Reference, ReferenceRule, Runner, RunnerSpec, SocialDriver, SocialSetup};
use crate::train::PreferenceAnchors;

pub const STATE_SOURCE: &str =
    "social-vehicle steps from rollouts of the evaluated policy at the fixed preference against the frozen ego";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KlPoint {
    pub beta: f64,
    /// Anchor of the guiding head compared against.
    pub anchor: f64,
    /// Mean over sampled states of `KL(guide ‖ policy)`.
    pub kl: f64,
    pub samples: usize,
    /// Set when fewer samples than the configured minimum were used.
    pub low_samples: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KlReport {
    pub policy: String,
    pub seed: u64,
    pub state_source: &'static str,
    pub points: Vec<KlPoint>,
}

/// Estimates the divergence at one preference. `heads` selects the
/// evaluated network's head (the meta head, or a guiding head for a
/// self-check).
#[allow(clippy::too_many_arguments)]
pub fn estimate_kl(
    cfg: &Config,
    policy: &PolicyNet<f32>,
    heads: HeadRule,
    guides: &PolicyNet<f32>,
    ego: &PolicyNet<f32>,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<KlPoint> {
    let anchors = PreferenceAnchors::from_config(&cfg.preferences)?;
    let anchor = anchors.anchors()[anchors.nearest(beta)];
    let spec = RunnerSpec {
        config: cfg,
        ego: EgoDriver::Policy { net: ego, greedy: false },
        mix: vec![(
            1.0,
            SocialSetup {
                name: "evaluated".into(),
                driver: SocialDriver::Policy { net: policy, heads, greedy: false },
                sampler: PreferenceSampler::Fixed(beta),
            },
        )],
        reference: Some(Reference { net: guides, anchors, rule: ReferenceRule::Nearest }),
        record: Recorder::Social,
        full_records: false,
        harvest_windows: false,
        n_envs: cfg.ppo.n_envs,
        seed,
        stream_tag: rng::derive_seed(rng::tag("eval-kl"), &[beta.to_bits()]),
    };
    let batch = Runner::new(spec)?.collect_light(None, n_samples)?;
    let kls: Vec<f64> = batch
        .records
        .iter()
        .map(|r| categorical_kl(&r.guide.expect("every vehicle has a nearest anchor"), &r.probs).max(0.0))
        .collect();
    let samples = kls.len();
    if samples < cfg.eval.kl_min_samples {
        log::warn!("KL estimate at beta={beta} uses only {samples} samples");
    }
    Ok(KlPoint {
        beta,
        anchor,
        kl: kls.iter().sum::<f64>() / samples.max(1) as f64,
        samples,
        low_samples: samples < cfg.eval.kl_min_samples,
    })
}

/// KL estimates over a preference grid for a meta-policy.
pub fn kl_curve(
    cfg: &Config,
    name: &str,
    meta: &PolicyNet<f32>,
    guides: &PolicyNet<f32>,
    ego: &PolicyNet<f32>,
    grid: &[f64],
    seed: u64,
) -> Result<KlReport> {
    let points = grid
        .iter()
        .map(|&b| estimate_kl(cfg, meta, HeadRule::Fixed(0), guides, ego, b, cfg.eval.kl_samples, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(KlReport { policy: name.to_string(), seed, state_source: STATE_SOURCE, points })
}

impl KlReport {
    pub const CSV_HEADER: &'static str = "policy,seed,beta,anchor,kl,samples,low_samples";

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| format!("{},{},{},{},{},{},{}", self.policy, self.seed, p.beta, p.anchor, p.kl, p.samples, p.low_samples))
            .collect()
    }
}
