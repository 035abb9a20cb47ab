//! Command implementations behind the `gmrl` binary. Each command writes
//! its artifacts plus a manifest into one directory.
//!
//! Layout under a run directory `<run>`:
//!
//! ```text
//! <run>/<stage>/            training artifacts (see train::stages)
//! <run>/eval-kl-<policy>/   report.json, report.csv
//! <run>/eval-sweep-<policy>/
//! <run>/eval-probe-<policy>/
//! <run>/eval-cross/         report.json, report.csv, traces/*.jsonl
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::Config;
use crate::error::Result;
use crate::eval::cross::trace_file_name;
use crate::eval::{
    cross_evaluate, kl_curve, preference_grid, probe_actions, sweep_preference_reward, write_csv, write_json,
    CrossReport, EgoEntry, Family, FamilyKind, KlReport, ProbeReport, SweepReport,
};
use crate::manifest::{Invocation, ProbeTarget, RunManifest, MANIFEST_FILE};
use crate::nets::PolicyNet;
use crate::sim::trace::{read_trace, replay, ReplaySummary};
use crate::train::rollout::HeadRule;
use crate::train::stages::{checkpoint_path, CHECKPOINT_FILE};
use crate::train::{load_stage, run_stage, Guidance, Stage, StageJob, StageReport, TrainOptions};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Settings shared by every command.
#[derive(Clone, Debug)]
pub struct Session {
    pub config: Config,
    pub seed: u64,
    /// Run directory: stage outputs and evaluation outputs live under it.
    pub out: PathBuf,
    pub workers: usize,
}

fn meta_job(policy: Guidance) -> StageJob {
    StageJob { stage: Stage::Meta, guidance: policy }
}

fn policy_label(policy: Guidance) -> &'static str {
    meta_job(policy).dir_name()
}

fn finish(mut manifest: RunManifest, dir: &Path, outputs: Vec<String>, started: Instant) -> Result<()> {
    manifest.outputs = outputs;
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.save(dir)?;
    Ok(())
}

pub fn train(s: &Session, job: StageJob, opts: &TrainOptions) -> Result<StageReport> {
    let started = Instant::now();
    let invocation = train_invocation(job, opts);
    let mut manifest = RunManifest::new(job.dir_name(), invocation, s.seed, &s.config, s.workers);
    manifest.inputs = job.prerequisites().into_iter().map(|p| checkpoint_path(&s.out, p)).collect();
    let report = run_stage(&s.config, job, &s.out, s.seed, opts)?;
    let dir = s.out.join(job.dir_name());
    let mut outputs: Vec<String> = vec![CHECKPOINT_FILE.into(), crate::train::stages::METRICS_FILE.into()];
    if matches!(job.stage, Stage::EgoInitial | Stage::EgoFinal) {
        outputs.push(crate::train::stages::AUTOENCODER_FILE.into());
    }
    finish(manifest, &dir, outputs, started)?;
    Ok(report)
}

/// The stages of a full run, in dependency order.
pub const PIPELINE: [StageJob; 5] = [
    StageJob { stage: Stage::EgoInitial, guidance: Guidance::Guided },
    StageJob { stage: Stage::Guiding, guidance: Guidance::Guided },
    StageJob { stage: Stage::Meta, guidance: Guidance::Guided },
    StageJob { stage: Stage::Meta, guidance: Guidance::Unguided },
    StageJob { stage: Stage::EgoFinal, guidance: Guidance::Guided },
];

fn train_invocation(job: StageJob, opts: &TrainOptions) -> Invocation {
    Invocation::Train { job, budget_scale: opts.budget_scale, max_iterations: opts.max_iterations, reg_weight: opts.reg_weight }
}

/// Whether `<out>/<stage>` already holds a checkpoint produced by exactly
/// this config, seed and options, judged by its manifest.
pub fn is_trained(s: &Session, job: StageJob, opts: &TrainOptions) -> bool {
    let dir = s.out.join(job.dir_name());
    let Ok(m) = RunManifest::load(&dir.join(MANIFEST_FILE)) else {
        return false;
    };
    m.config_hash == s.config.hash()
        && m.seed == s.seed
        && m.invocation == train_invocation(job, opts)
        && m.outputs.iter().all(|f| dir.join(f).is_file())
}

/// Trains `job` unless an identical run already left its artifacts; returns
/// the report when training happened.
pub fn train_if_needed(s: &Session, job: StageJob, opts: &TrainOptions) -> Result<Option<StageReport>> {
    if is_trained(s, job, opts) {
        log::info!("{}: reusing {}", job.dir_name(), s.out.join(job.dir_name()).display());
        return Ok(None);
    }
    train(s, job, opts).map(Some)
}

fn eval_dir(s: &Session, name: &str) -> Result<PathBuf> {
    let dir = s.out.join(name);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn eval_kl(s: &Session, run_dir: &Path, policy: Guidance, samples: usize) -> Result<KlReport> {
    let started = Instant::now();
    let mut cfg = s.config.clone();
    cfg.eval.kl_samples = samples;
    let inputs = [meta_job(policy), StageJob::new(Stage::Guiding), StageJob::new(Stage::EgoInitial)];
    let meta = load_stage(run_dir, inputs[0])?;
    let guides = load_stage(run_dir, inputs[1])?;
    let ego = load_stage(run_dir, inputs[2])?;
    let [lo, hi] = cfg.preferences.meta_range;
    let grid = preference_grid(lo, hi, cfg.eval.beta_grid_step)?;
    let report = kl_curve(&cfg, policy_label(policy), &meta, &guides, &ego, &grid, s.seed)?;

    let name = format!("eval-kl-{}", policy_label(policy));
    let dir = eval_dir(s, &name)?;
    let invocation = Invocation::EvalKl { run_dir: run_dir.to_path_buf(), policy, samples };
    let mut manifest = RunManifest::new(&name, invocation, s.seed, &s.config, s.workers);
    manifest.inputs = inputs.iter().map(|&j| checkpoint_path(run_dir, j)).collect();
    write_json(&dir.join(REPORT_JSON), &report)?;
    write_csv(&dir.join(REPORT_CSV), KlReport::CSV_HEADER, report.csv_rows())?;
    finish(manifest, &dir, vec![REPORT_JSON.into(), REPORT_CSV.into()], started)?;
    Ok(report)
}

pub fn eval_sweep(s: &Session, run_dir: &Path, policy: Guidance, steps: usize) -> Result<SweepReport> {
    let started = Instant::now();
    let inputs = [meta_job(policy), StageJob::new(Stage::EgoInitial)];
    let meta = load_stage(run_dir, inputs[0])?;
    let ego = load_stage(run_dir, inputs[1])?;
    let [lo, hi] = s.config.preferences.meta_range;
    let grid = preference_grid(lo, hi, s.config.eval.beta_grid_step)?;
    let report = sweep_preference_reward(&s.config, policy_label(policy), &meta, &ego, &grid, steps, s.seed)?;

    let name = format!("eval-sweep-{}", policy_label(policy));
    let dir = eval_dir(s, &name)?;
    let invocation = Invocation::EvalSweep { run_dir: run_dir.to_path_buf(), policy, steps };
    let mut manifest = RunManifest::new(&name, invocation, s.seed, &s.config, s.workers);
    manifest.inputs = inputs.iter().map(|&j| checkpoint_path(run_dir, j)).collect();
    write_json(&dir.join(REPORT_JSON), &report)?;
    write_csv(&dir.join(REPORT_CSV), SweepReport::CSV_HEADER, report.csv_rows())?;
    finish(manifest, &dir, vec![REPORT_JSON.into(), REPORT_CSV.into()], started)?;
    Ok(report)
}

pub fn eval_probe(s: &Session, run_dir: &Path, policy: ProbeTarget) -> Result<ProbeReport> {
    let started = Instant::now();
    let (job, label) = match policy {
        ProbeTarget::Guiding => (StageJob::new(Stage::Guiding), "guiding"),
        ProbeTarget::Meta => (meta_job(Guidance::Guided), "meta"),
        ProbeTarget::MetaWog => (meta_job(Guidance::Unguided), "meta-wog"),
    };
    let net = load_stage(run_dir, job)?;
    let report = match policy {
        ProbeTarget::Guiding => {
            probe_actions(&s.config.scenario, label, &net, HeadRule::Anchor, &s.config.preferences.anchors)?
        }
        _ => {
            let [lo, hi] = s.config.preferences.meta_range;
            let grid = preference_grid(lo, hi, s.config.eval.beta_grid_step)?;
            probe_actions(&s.config.scenario, label, &net, HeadRule::Fixed(0), &grid)?
        }
    };
    let name = format!("eval-probe-{label}");
    let dir = eval_dir(s, &name)?;
    let invocation = Invocation::EvalProbe { run_dir: run_dir.to_path_buf(), policy };
    let mut manifest = RunManifest::new(&name, invocation, s.seed, &s.config, s.workers);
    manifest.inputs = vec![checkpoint_path(run_dir, job)];
    write_json(&dir.join(REPORT_JSON), &report)?;
    write_csv(&dir.join(REPORT_CSV), ProbeReport::CSV_HEADER, report.csv_rows())?;
    finish(manifest, &dir, vec![REPORT_JSON.into(), REPORT_CSV.into()], started)?;
    Ok(report)
}

/// Names the loaded ego checkpoints and lists the traffic each was trained on.
pub fn ego_entries(loaded: &[(StageJob, PolicyNet<f32>)]) -> Vec<EgoEntry<'_>> {
    loaded
        .iter()
        .filter_map(|(job, net)| {
            let (name, trained_on) = match (job.stage, job.guidance) {
                (Stage::EgoInitial, _) => ("idm-only", vec![FamilyKind::Idm]),
                (Stage::EgoFinal, Guidance::Guided) => ("ours", vec![FamilyKind::Idm, FamilyKind::MetaRl]),
                (Stage::EgoFinal, Guidance::Unguided) => ("ours-wog", vec![FamilyKind::Idm, FamilyKind::MetaRlWog]),
                _ => return None,
            };
            Some(EgoEntry { name: name.into(), net, trained_on })
        })
        .collect()
}

/// Cross-evaluates the run's egos (`idm-only`, `ours`, and `ours-wog` when
/// present) against the four standard families.
pub fn eval_cross(s: &Session, run_dir: &Path, episodes: usize, seeds: &[u64], traces: bool) -> Result<CrossReport> {
    let started = Instant::now();
    let mut jobs = vec![StageJob::new(Stage::EgoInitial), StageJob::new(Stage::EgoFinal)];
    if checkpoint_path(run_dir, StageJob::unguided(Stage::EgoFinal)).is_file() {
        jobs.push(StageJob::unguided(Stage::EgoFinal));
    }
    let socials = [meta_job(Guidance::Guided), meta_job(Guidance::Unguided)];
    let loaded: Vec<(StageJob, PolicyNet<f32>)> =
        jobs.iter().map(|&j| Ok((j, load_stage(run_dir, j)?))).collect::<Result<_>>()?;
    let guided = load_stage(run_dir, socials[0])?;
    let unguided = load_stage(run_dir, socials[1])?;
    let egos = ego_entries(&loaded);
    let families = Family::standard(&s.config, &guided, &unguided);

    let dir = eval_dir(s, "eval-cross")?;
    let trace_dir = dir.join("traces");
    if traces {
        std::fs::create_dir_all(&trace_dir)?;
    }
    let report =
        cross_evaluate(&s.config, &egos, &families, episodes, seeds, s.workers, traces.then_some(trace_dir.as_path()))?;

    let invocation = Invocation::EvalCross { run_dir: run_dir.to_path_buf(), episodes, seeds: seeds.to_vec(), traces };
    let mut manifest = RunManifest::new("eval-cross", invocation, s.seed, &s.config, s.workers);
    manifest.inputs = jobs.iter().chain(&socials).map(|&j| checkpoint_path(run_dir, j)).collect();
    write_json(&dir.join(REPORT_JSON), &report)?;
    write_csv(&dir.join(REPORT_CSV), CrossReport::CSV_HEADER, report.csv_rows())?;
    let mut outputs = vec![REPORT_JSON.to_string(), REPORT_CSV.to_string()];
    if traces {
        for e in &egos {
            for f in &families {
                for &seed in seeds {
                    outputs.push(format!("traces/{}", trace_file_name(&e.name, f.kind, seed)));
                }
            }
        }
    }
    finish(manifest, &dir, outputs, started)?;
    Ok(report)
}

/// Re-simulates a trace file and checks every recorded transition.
pub fn replay_trace(config: &Config, path: &Path) -> Result<ReplaySummary> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    replay(&config.scenario, &read_trace(file)?)
}

/// Re-executes the command recorded in a manifest with its recorded config
/// and seed, writing into `out` instead of the original run directory.
pub fn rerun(manifest: &RunManifest, out: &Path, workers: usize) -> Result<()> {
    let s = Session { config: manifest.config.clone(), seed: manifest.seed, out: out.to_path_buf(), workers };
    match &manifest.invocation {
        Invocation::Train { job, budget_scale, max_iterations, reg_weight } => {
            let opts = TrainOptions { budget_scale: *budget_scale, max_iterations: *max_iterations, reg_weight: *reg_weight };
            train(&s, *job, &opts).map(|_| ())
        }
        Invocation::EvalKl { run_dir, policy, samples } => eval_kl(&s, run_dir, *policy, *samples).map(|_| ()),
        Invocation::EvalSweep { run_dir, policy, steps } => eval_sweep(&s, run_dir, *policy, *steps).map(|_| ()),
        Invocation::EvalProbe { run_dir, policy } => eval_probe(&s, run_dir, *policy).map(|_| ()),
        Invocation::EvalCross { run_dir, episodes, seeds, traces } => {
            eval_cross(&s, run_dir, *episodes, seeds, *traces).map(|_| ())
        }
    }
}
