//! The four training stages, their prerequisites, and their artifacts.
//!
//! A run directory holds one subdirectory per stage job:
//!
//! ```text
//! <run>/ego-initial/{params.json, metrics.csv, autoencoder.csv}
//! <run>/guiding/{params.json, metrics.csv}
//! <run>/meta/...            guided meta-policy
//! <run>/meta-wog/...        meta-policy trained without guides
//! <run>/ego-final/{params.json, metrics.csv, autoencoder.csv}
//! <run>/ego-final-wog/...   ego trained against the unguided meta-policy
//! ```
//!
//! `metrics.csv` has one row per training iteration with the columns of
//! [`METRICS_HEADER`]: `step` counts learning-agent records so far,
//! `mean_return` averages the returns of episodes (ego stages) or vehicle
//! lives (social stages) that ended during the iteration, and
//! `idm_episodes`/`policy_episodes` count finished episodes by social
//! controller type.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Config, PpoConfig};
use crate::error::{Error, Result};
use crate::nets::PolicyNet;
use crate::rng;
use crate::sim::PreferenceSampler;
use crate::train::anchors::PreferenceAnchors;
use crate::train::inference::train_autoencoder;
use crate::train::ppo::{PpoLearner, UpdateStats};
use crate::train::rollout::{
    EgoDriver, HeadRule, Recorder, Reference, ReferenceRule, RolloutBatch, Runner, RunnerSpec, SocialDriver,
    SocialSetup,
};
use crate::train::Stage;

pub const CHECKPOINT_FILE: &str = "params.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AUTOENCODER_FILE: &str = "autoencoder.csv";
pub const METRICS_HEADER: &str = "step,stage,iteration,policy_loss,value_loss,entropy,reg_loss,total_loss,mean_kl,mean_return,episodes,idm_episodes,policy_episodes,dropped_batches,lr";

/// Whether the social meta-policy involved was trained with guides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Guidance {
    Guided,
    Unguided,
}

/// A stage plus the meta-policy variant it trains or trains against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageJob {
    pub stage: Stage,
    pub guidance: Guidance,
}

impl StageJob {
    pub fn new(stage: Stage) -> Self {
        StageJob { stage, guidance: Guidance::Guided }
    }

    pub fn unguided(stage: Stage) -> Self {
        StageJob { stage, guidance: Guidance::Unguided }
    }

    pub fn dir_name(&self) -> &'static str {
        match (self.stage, self.guidance) {
            (Stage::EgoInitial, _) => "ego-initial",
            (Stage::Guiding, _) => "guiding",
            (Stage::Meta, Guidance::Guided) => "meta",
            (Stage::Meta, Guidance::Unguided) => "meta-wog",
            (Stage::EgoFinal, Guidance::Guided) => "ego-final",
            (Stage::EgoFinal, Guidance::Unguided) => "ego-final-wog",
        }
    }

    /// Both variants of a stage draw from the same seed streams, so they
    /// differ only in what the guide changes.
    fn seed_tag(&self) -> u64 {
        rng::tag(StageJob::new(self.stage).dir_name())
    }

    /// Checkpoints the stage reads, nearest predecessor first.
    pub fn prerequisites(&self) -> Vec<StageJob> {
        match (self.stage, self.guidance) {
            (Stage::EgoInitial, _) => vec![],
            (Stage::Guiding, _) => vec![StageJob::new(Stage::EgoInitial)],
            (Stage::Meta, Guidance::Guided) => vec![StageJob::new(Stage::Guiding), StageJob::new(Stage::EgoInitial)],
            (Stage::Meta, Guidance::Unguided) => vec![StageJob::new(Stage::EgoInitial)],
            (Stage::EgoFinal, g) => {
                vec![StageJob { stage: Stage::Meta, guidance: g }, StageJob::new(Stage::EgoInitial)]
            }
        }
    }
}

pub fn checkpoint_path(run_dir: &Path, job: StageJob) -> PathBuf {
    run_dir.join(job.dir_name()).join(CHECKPOINT_FILE)
}

/// Loads a finished stage's network, or reports which stage is missing.
pub fn load_stage(run_dir: &Path, job: StageJob) -> Result<PolicyNet<f32>> {
    let path = checkpoint_path(run_dir, job);
    if !path.is_file() {
        return Err(Error::MissingPrerequisite { stage: job.dir_name().to_string(), path });
    }
    PolicyNet::load(&path)
}

/// Knobs for shortened runs (smoke tests, identity checks).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    /// Multiplies every stage budget and the autoencoder window count.
    pub budget_scale: f64,
    /// Stops after this many PPO iterations.
    pub max_iterations: Option<usize>,
    /// Overrides the configured guide weight in the guided meta stage.
    pub reg_weight: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { budget_scale: 1.0, max_iterations: None, reg_weight: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub job: StageJob,
    pub iterations: usize,
    pub records: u64,
    pub episodes: usize,
    pub idm_episodes: usize,
    pub policy_episodes: usize,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub stage: String,
    pub iteration: usize,
    pub stats: UpdateStats,
    pub mean_return: f64,
    pub episodes: usize,
    pub idm_episodes: usize,
    pub policy_episodes: usize,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.stage,
            self.iteration,
            s.policy_loss,
            s.value_loss,
            s.entropy,
            s.reg_loss,
            s.total_loss,
            s.mean_kl,
            self.mean_return,
            self.episodes,
            self.idm_episodes,
            self.policy_episodes,
            s.dropped_batches,
            s.lr
        )
    }
}

fn idm_setup<'a>() -> SocialSetup<'a> {
    SocialSetup { name: "idm".into(), driver: SocialDriver::Idm, sampler: PreferenceSampler::Fixed(0.0) }
}

fn meta_range(cfg: &Config) -> PreferenceSampler {
    let [lo, hi] = cfg.preferences.meta_range;
    PreferenceSampler::Uniform { lo, hi }
}

struct Context<'c> {
    cfg: &'c Config,
    job: StageJob,
    dir: PathBuf,
    seed: u64,
    opts: &'c TrainOptions,
}

impl Context<'_> {
    fn derive(&self, label: &str) -> u64 {
        rng::derive_seed(self.seed, &[self.job.seed_tag(), rng::tag(label)])
    }

    fn ppo(&self) -> PpoConfig {
        self.cfg.stage_ppo(self.job.stage)
    }

    fn iterations(&self, budget: u64, per_iteration: usize) -> usize {
        let scaled = (budget as f64 * self.opts.budget_scale).ceil().max(1.0) as u64;
        let n = scaled.div_ceil(per_iteration as u64).max(1) as usize;
        self.opts.max_iterations.map_or(n, |m| n.min(m))
    }

    fn windows(&self) -> usize {
        let icfg = &self.cfg.stages.inference;
        ((icfg.windows as f64 * self.opts.budget_scale).ceil() as usize).max(icfg.minibatch)
    }

    fn spec<'a>(&'a self, ego: EgoDriver<'a>, mix: Vec<(f64, SocialSetup<'a>)>, record: Recorder, label: &str) -> RunnerSpec<'a> {
        RunnerSpec {
            config: self.cfg,
            ego,
            mix,
            reference: None,
            record,
            full_records: true,
            harvest_windows: false,
            n_envs: self.ppo().n_envs,
            seed: self.seed,
            stream_tag: self.derive(label),
        }
    }
}

fn write_autoencoder_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "epoch,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    out.flush()?;
    Ok(())
}

/// Runs PPO iterations, streaming one metrics row per iteration.
fn ppo_loop(
    ctx: &Context<'_>,
    runner: &mut Runner<'_>,
    net: &mut PolicyNet<f32>,
    mut learner: PpoLearner,
    iterations: usize,
    per_iteration: usize,
    idm_setups: &[bool],
) -> Result<StageReport> {
    let metrics_path = ctx.dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let (mut step, mut episodes, mut idm_total) = (0u64, 0usize, 0usize);
    for iteration in 0..iterations {
        let batch: RolloutBatch = runner.collect(Some(&*net), per_iteration)?;
        let stats = learner.update(net, &batch)?;
        step += batch.records.len() as u64;
        let mean_return = match ctx.job.stage {
            Stage::EgoInitial | Stage::EgoFinal => {
                let r: Vec<f64> = batch.episodes.iter().map(|e| e.ego_return).collect();
                mean(&r)
            }
            _ => {
                let r: Vec<f64> = batch.lives.iter().map(|l| l.social_return).collect();
                mean(&r)
            }
        };
        let idm = batch.episodes.iter().filter(|e| idm_setups[e.setup]).count();
        episodes += batch.episodes.len();
        idm_total += idm;
        let row = MetricsRow {
            step,
            stage: ctx.job.dir_name().to_string(),
            iteration,
            stats,
            mean_return,
            episodes: batch.episodes.len(),
            idm_episodes: idm,
            policy_episodes: batch.episodes.len() - idm,
        };
        writeln!(metrics, "{}", row.to_csv())?;
        metrics.flush()?;
        log::info!(
            "{} iteration {}/{}: return {:.3}, entropy {:.3}, total loss {:.4}",
            ctx.job.dir_name(),
            iteration + 1,
            iterations,
            row.mean_return,
            row.stats.entropy,
            row.stats.total_loss
        );
    }
    let checkpoint = ctx.dir.join(CHECKPOINT_FILE);
    net.store.save(&checkpoint)?;
    Ok(StageReport {
        job: ctx.job,
        iterations,
        records: step,
        episodes,
        idm_episodes: idm_total,
        policy_episodes: episodes - idm_total,
        checkpoint,
        metrics: metrics_path,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains one stage job inside `run_dir` and writes its checkpoint and
/// metrics. Every prerequisite checkpoint must already exist there.
pub fn run_stage(cfg: &Config, job: StageJob, run_dir: &Path, seed: u64, opts: &TrainOptions) -> Result<StageReport> {
    cfg.validate()?;
    // fail fast on missing inputs before any work
    for p in job.prerequisites() {
        let path = checkpoint_path(run_dir, p);
        if !path.is_file() {
            return Err(Error::MissingPrerequisite { stage: p.dir_name().to_string(), path });
        }
    }
    let dir = run_dir.join(job.dir_name());
    std::fs::create_dir_all(&dir)?;
    let ctx = Context { cfg, job, dir, seed, opts };
    match job.stage {
        Stage::EgoInitial => ego_initial(&ctx),
        Stage::Guiding => guiding(&ctx, run_dir),
        Stage::Meta => meta(&ctx, run_dir),
        Stage::EgoFinal => ego_final(&ctx, run_dir),
    }
}

fn ego_initial(ctx: &Context<'_>) -> Result<StageReport> {
    let cfg = ctx.cfg;
    let mut net = PolicyNet::<f32>::ego(&cfg.network, ctx.derive("init"))?;

    // trajectory windows from a random ego among rule-based traffic
    let mut spec = ctx.spec(EgoDriver::Random, vec![(1.0, idm_setup())], Recorder::Nobody, "windows");
    spec.harvest_windows = true;
    let windows = Runner::new(spec)?.collect_windows(None, ctx.windows())?;
    let mut rng = rng::stream(ctx.seed, &[ctx.job.seed_tag(), rng::tag("autoencoder")]);
    let losses = train_autoencoder(&mut net, &windows, &cfg.stages.inference, &mut rng)?;
    write_autoencoder_log(&ctx.dir.join(AUTOENCODER_FILE), &losses)?;

    let ppo = ctx.ppo();
    let iterations = ctx.iterations(cfg.stages.ego_initial.budget, ppo.records_per_iteration);
    let mut runner = Runner::new(ctx.spec(EgoDriver::Learner, vec![(1.0, idm_setup())], Recorder::Ego, "rollout"))?;
    let learner = make_learner(ctx, &ppo, iterations);
    ppo_loop(ctx, &mut runner, &mut net, learner, iterations, ppo.records_per_iteration, &[true])
}

fn make_learner(ctx: &Context<'_>, ppo: &PpoConfig, iterations: usize) -> PpoLearner {
    let total = iterations as u64 * PpoLearner::steps_per_update(ppo, ppo.records_per_iteration);
    PpoLearner::new(ppo.clone(), total, rng::stream(ctx.seed, &[ctx.job.seed_tag(), rng::tag("shuffle")]))
        .with_max_drops(ctx.cfg.stages.max_consecutive_drops)
}

fn guiding(ctx: &Context<'_>, run_dir: &Path) -> Result<StageReport> {
    let cfg = ctx.cfg;
    let ego = load_stage(run_dir, StageJob::new(Stage::EgoInitial))?;
    let anchors = cfg.preferences.anchors.clone();
    let mut net = PolicyNet::<f32>::guiding(&cfg.network, &anchors, ctx.derive("init"))?;
    let setup = SocialSetup {
        name: "guiding".into(),
        driver: SocialDriver::Learner { heads: HeadRule::Anchor },
        sampler: PreferenceSampler::Discrete(anchors.clone()),
    };
    let ppo = ctx.ppo();
    let budget = cfg.stages.guiding.budget * anchors.len() as u64;
    let iterations = ctx.iterations(budget, ppo.records_per_iteration);
    let spec = ctx.spec(EgoDriver::Policy { net: &ego, greedy: false }, vec![(1.0, setup)], Recorder::Social, "rollout");
    let mut runner = Runner::new(spec)?;
    let learner = make_learner(ctx, &ppo, iterations).with_per_head_normalization(true);
    ppo_loop(ctx, &mut runner, &mut net, learner, iterations, ppo.records_per_iteration, &[false])
}

fn meta(ctx: &Context<'_>, run_dir: &Path) -> Result<StageReport> {
    let cfg = ctx.cfg;
    let ego = load_stage(run_dir, StageJob::new(Stage::EgoInitial))?;
    let guides = match ctx.job.guidance {
        Guidance::Guided => Some(load_stage(run_dir, StageJob::new(Stage::Guiding))?),
        Guidance::Unguided => None,
    };
    let mut net = PolicyNet::<f32>::meta(&cfg.network, ctx.derive("init"))?;
    let setup = SocialSetup {
        name: "meta".into(),
        driver: SocialDriver::Learner { heads: HeadRule::Fixed(0) },
        sampler: meta_range(cfg),
    };
    let ppo = ctx.ppo();
    let iterations = ctx.iterations(cfg.stages.meta.budget, ppo.records_per_iteration);
    let mut spec = ctx.spec(EgoDriver::Policy { net: &ego, greedy: false }, vec![(1.0, setup)], Recorder::Social, "rollout");
    let anchors = PreferenceAnchors::from_config(&cfg.preferences)?;
    let reg_weight = match &guides {
        Some(g) => {
            spec.reference = Some(Reference { net: g, anchors, rule: ReferenceRule::WithinDistance });
            ctx.opts.reg_weight.unwrap_or(cfg.preferences.reg_weight)
        }
        None => 0.0,
    };
    let mut runner = Runner::new(spec)?;
    let learner = make_learner(ctx, &ppo, iterations).with_reg_weight(reg_weight);
    ppo_loop(ctx, &mut runner, &mut net, learner, iterations, ppo.records_per_iteration, &[false])
}

/// Rule-based or frozen meta-policy traffic, chosen per episode.
fn mixed_traffic<'a>(cfg: &Config, social: &'a PolicyNet<f32>) -> Vec<(f64, SocialSetup<'a>)> {
    let p_idm = cfg.stages.idm_episode_prob;
    vec![
        (p_idm, idm_setup()),
        (
            1.0 - p_idm,
            SocialSetup {
                name: "meta".into(),
                driver: SocialDriver::Policy { net: social, heads: HeadRule::Fixed(0), greedy: false },
                sampler: meta_range(cfg),
            },
        ),
    ]
}

fn ego_final(ctx: &Context<'_>, run_dir: &Path) -> Result<StageReport> {
    let cfg = ctx.cfg;
    let mut net = load_stage(run_dir, StageJob::new(Stage::EgoInitial))?;
    let social = load_stage(run_dir, StageJob { stage: Stage::Meta, guidance: ctx.job.guidance })?;
    let mix = || mixed_traffic(cfg, &social);

    // refit the trajectory encoder on the mixed traffic
    let snapshot = net.clone();
    let mut spec = ctx.spec(EgoDriver::Policy { net: &snapshot, greedy: false }, mix(), Recorder::Nobody, "windows");
    spec.harvest_windows = true;
    let windows = Runner::new(spec)?.collect_windows(None, ctx.windows())?;
    let mut rng = rng::stream(ctx.seed, &[ctx.job.seed_tag(), rng::tag("autoencoder")]);
    let losses = train_autoencoder(&mut net, &windows, &cfg.stages.inference, &mut rng)?;
    write_autoencoder_log(&ctx.dir.join(AUTOENCODER_FILE), &losses)?;

    let ppo = ctx.ppo();
    let iterations = ctx.iterations(cfg.stages.ego_final.budget, ppo.records_per_iteration);
    let mut runner = Runner::new(ctx.spec(EgoDriver::Learner, mix(), Recorder::Ego, "rollout"))?;
    let learner = make_learner(ctx, &ppo, iterations);
    ppo_loop(ctx, &mut runner, &mut net, learner, iterations, ppo.records_per_iteration, &[true, false])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prerequisites_follow_the_pipeline() {
        assert!(StageJob::new(Stage::EgoInitial).prerequisites().is_empty());
        let meta = StageJob::new(Stage::Meta).prerequisites();
        assert!(meta.contains(&StageJob::new(Stage::Guiding)));
        assert!(!StageJob::unguided(Stage::Meta).prerequisites().contains(&StageJob::new(Stage::Guiding)));
        assert!(StageJob::unguided(Stage::EgoFinal).prerequisites().contains(&StageJob::unguided(Stage::Meta)));
    }

    #[test]
    fn variants_share_seed_streams() {
        assert_eq!(StageJob::new(Stage::Meta).seed_tag(), StageJob::unguided(Stage::Meta).seed_tag());
        assert_ne!(StageJob::new(Stage::Meta).dir_name(), StageJob::unguided(Stage::Meta).dir_name());
    }

    #[test]
    fn missing_prerequisite_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_stage(&Config::default(), StageJob::new(Stage::Meta), dir.path(), 0, &TrainOptions::default())
            .unwrap_err();
        match err {
            Error::MissingPrerequisite { stage, .. } => assert_eq!(stage, "guiding"),
            other => panic!("unexpected {other}"),
        }
    }
}
