//! Outcome rates of each ego policy against each social-vehicle family.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::nets::PolicyNet;
use crate::rng;
use crate::sim::{EpisodeOutcome, PreferenceSampler};
use crate::train::rollout::{EgoDriver, HeadRule, Recorder, Runner, RunnerSpec, SocialDriver, SocialSetup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Rule-based drivers.
    Idm,
    /// Guided meta-policy, preferences in the training range.
    MetaRl,
    /// Meta-policy trained without guides, preferences in the training range.
    MetaRlWog,
    /// Guided meta-policy with preferences drawn from the wider range.
    MetaRlOod,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Idm => "idm",
            FamilyKind::MetaRl => "meta-rl",
            FamilyKind::MetaRlWog => "meta-rl-wog",
            FamilyKind::MetaRlOod => "meta-rl-ood",
        }
    }
}

/// A social-vehicle population for evaluation.
#[derive(Clone, Debug)]
pub struct Family<'a> {
    pub kind: FamilyKind,
    pub net: Option<&'a PolicyNet<f32>>,
    pub sampler: PreferenceSampler,
}

impl<'a> Family<'a> {
    pub fn idm() -> Self {
        Family { kind: FamilyKind::Idm, net: None, sampler: PreferenceSampler::Fixed(0.0) }
    }

    /// The standard families: rule-based, guided meta, unguided meta, and
    /// guided meta with out-of-range preferences.
    pub fn standard(cfg: &Config, guided: &'a PolicyNet<f32>, unguided: &'a PolicyNet<f32>) -> Vec<Family<'a>> {
        let [lo, hi] = cfg.preferences.meta_range;
        let [olo, ohi] = cfg.preferences.ood_range;
        vec![
            Family::idm(),
            Family { kind: FamilyKind::MetaRl, net: Some(guided), sampler: PreferenceSampler::Uniform { lo, hi } },
            Family { kind: FamilyKind::MetaRlWog, net: Some(unguided), sampler: PreferenceSampler::Uniform { lo, hi } },
            Family { kind: FamilyKind::MetaRlOod, net: Some(guided), sampler: PreferenceSampler::Uniform { lo: olo, hi: ohi } },
        ]
    }

    fn setup(&self) -> SocialSetup<'a> {
        let driver = match self.net {
            None => SocialDriver::Idm,
            Some(net) => SocialDriver::Policy { net, heads: HeadRule::Fixed(0), greedy: false },
        };
        SocialSetup { name: self.kind.name().into(), driver, sampler: self.sampler.clone() }
    }
}

/// An ego policy and the families it met during training.
#[derive(Clone, Debug)]
pub struct EgoEntry<'a> {
    pub name: String,
    pub net: &'a PolicyNet<f32>,
    pub trained_on: Vec<FamilyKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutcomeCell {
    pub ego: String,
    pub family: FamilyKind,
    /// The family was not part of this ego's training traffic.
    pub ood: bool,
    pub episodes: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub seeds: Vec<u64>,
}

impl OutcomeCell {
    fn new(ego: &EgoEntry<'_>, family: FamilyKind, seeds: &[u64]) -> Self {
        OutcomeCell {
            ego: ego.name.clone(),
            family,
            ood: !ego.trained_on.contains(&family),
            episodes: 0,
            successes: 0,
            collisions: 0,
            timeouts: 0,
            success_rate: 0.0,
            collision_rate: 0.0,
            timeout_rate: 0.0,
            seeds: seeds.to_vec(),
        }
    }

    fn add(&mut self, outcome: EpisodeOutcome) {
        self.episodes += 1;
        match outcome {
            EpisodeOutcome::Success => self.successes += 1,
            EpisodeOutcome::Collision => self.collisions += 1,
            EpisodeOutcome::Timeout => self.timeouts += 1,
        }
    }

    fn finish(&mut self) {
        let n = self.episodes.max(1) as f64;
        self.success_rate = self.successes as f64 / n;
        self.collision_rate = self.collisions as f64 / n;
        self.timeout_rate = self.timeouts as f64 / n;
    }

    /// The outcome counts partition the episodes.
    pub fn is_partition(&self) -> bool {
        self.successes + self.collisions + self.timeouts == self.episodes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossReport {
    pub episodes_per_seed: usize,
    pub cells: Vec<OutcomeCell>,
}

impl CrossReport {
    pub const CSV_HEADER: &'static str =
        "ego,family,ood,episodes,successes,collisions,timeouts,success_rate,collision_rate,timeout_rate,seeds";

    pub fn csv_rows(&self) -> Vec<String> {
        self.cells
            .iter()
            .map(|c| {
                let seeds: Vec<String> = c.seeds.iter().map(u64::to_string).collect();
                format!(
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    c.ego,
                    c.family.name(),
                    c.ood,
                    c.episodes,
                    c.successes,
                    c.collisions,
                    c.timeouts,
                    c.success_rate,
                    c.collision_rate,
                    c.timeout_rate,
                    seeds.join(" ")
                )
            })
            .collect()
    }

    pub fn cell(&self, ego: &str, family: FamilyKind) -> Option<&OutcomeCell> {
        self.cells.iter().find(|c| c.ego == ego && c.family == family)
    }
}

/// File name of the trace of one (ego, family, seed) run.
pub fn trace_file_name(ego: &str, family: FamilyKind, seed: u64) -> String {
    format!("{ego}__{}__seed{seed}.jsonl", family.name())
}

fn run_one(
    cfg: &Config,
    ego: &EgoEntry<'_>,
    family: &Family<'_>,
    episodes: usize,
    seed: u64,
    trace_dir: Option<&Path>,
) -> Result<Vec<EpisodeOutcome>> {
    let spec = RunnerSpec {
        config: cfg,
        ego: EgoDriver::Policy { net: ego.net, greedy: true },
        mix: vec![(1.0, family.setup())],
        reference: None,
        record: Recorder::Nobody,
        full_records: false,
        harvest_windows: false,
        n_envs: cfg.ppo.n_envs,
        seed,
        // every ego meets the same episodes of a family
        stream_tag: rng::tag(family.kind.name()),
    };
    let mut runner = Runner::new(spec)?;
    if let Some(dir) = trace_dir {
        let file = File::create(dir.join(trace_file_name(&ego.name, family.kind, seed)))?;
        runner = runner.with_trace(Box::new(BufWriter::new(file)));
    }
    let batch = runner.run_episodes(None, episodes as u64)?;
    runner.finish_trace()?;
    let mut eps = batch.episodes;
    eps.sort_by_key(|e| e.episode);
    Ok(eps.into_iter().map(|e| e.outcome).collect())
}

/// Runs `episodes` greedy-ego episodes per seed for every (ego, family)
/// pair. Work is spread over `workers` threads; results do not depend on
/// the worker count.
pub fn cross_evaluate(
    cfg: &Config,
    egos: &[EgoEntry<'_>],
    families: &[Family<'_>],
    episodes: usize,
    seeds: &[u64],
    workers: usize,
    trace_dir: Option<&Path>,
) -> Result<CrossReport> {
    let mut tasks = Vec::new();
    for (ei, _) in egos.iter().enumerate() {
        for (fi, _) in families.iter().enumerate() {
            for &seed in seeds {
                tasks.push((ei, fi, seed));
            }
        }
    }
    let workers = workers.max(1).min(tasks.len().max(1));
    let mut results: Vec<Option<Result<Vec<EpisodeOutcome>>>> = (0..tasks.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let tasks = &tasks;
                scope.spawn(move || {
                    tasks
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| k % workers == w)
                        .map(|(k, &(ei, fi, seed))| (k, run_one(cfg, &egos[ei], &families[fi], episodes, seed, trace_dir)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (k, r) in h.join().expect("evaluation worker panicked") {
                results[k] = Some(r);
            }
        }
    });
    let mut cells = Vec::new();
    let mut it = results.into_iter();
    for ego in egos {
        for family in families {
            let mut cell = OutcomeCell::new(ego, family.kind, seeds);
            for _ in seeds {
                for o in it.next().flatten().expect("every task ran")? {
                    cell.add(o);
                }
            }
            cell.finish();
            cells.push(cell);
        }
    }
    Ok(CrossReport { episodes_per_seed: episodes, cells })
}
