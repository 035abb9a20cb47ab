//! Lock-stepped rollout collection over several environments.
//!
//! Each episode draws everything random (spawn layout, social family, IDM
//! styles, sampled actions) from streams derived from its own index, and
//! batched network evaluation is row-independent, so an episode's course
//! does not depend on how many environments run alongside it.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, IDM_AGGRESSIVE, IDM_CONSERVATIVE};
use crate::error::{Error, Result};
use crate::idm::{idm_policy, IdmParams};
use crate::nets::{history_features, EncodedObs, PolicyNet, PolicyOutput, SetBatch};
use crate::rng;
use crate::sim::trace::{TraceLine, TraceWriter};
use crate::sim::{ActionIndex, EpisodeOutcome, Flag, Intersection, PhysicalRow, PreferenceSampler, N_ACTIONS};
use crate::train::anchors::PreferenceAnchors;

/// Which head a social policy uses for a vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeadRule {
    Fixed(usize),
    /// The guiding head whose anchor equals the vehicle's preference.
    Anchor,
}

#[derive(Clone, Copy, Debug)]
pub enum SocialDriver<'a> {
    Idm,
    Policy { net: &'a PolicyNet<f32>, heads: HeadRule, greedy: bool },
    /// The network being trained, supplied on each collection call; samples actions.
    Learner { heads: HeadRule },
}

/// One population of social vehicles: who drives them and how their
/// preferences are drawn.
#[derive(Clone, Debug)]
pub struct SocialSetup<'a> {
    pub name: String,
    pub driver: SocialDriver<'a>,
    pub sampler: PreferenceSampler,
}

#[derive(Clone, Copy, Debug)]
pub enum EgoDriver<'a> {
    Policy { net: &'a PolicyNet<f32>, greedy: bool },
    /// The network being trained, supplied on each collection call; samples actions.
    Learner,
    Random,
}

/// Which guiding head a social vehicle is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceRule {
    /// Only vehicles whose preference lies within the guide distance of an anchor.
    WithinDistance,
    /// Every vehicle, against its nearest anchor.
    Nearest,
}

/// Frozen guiding heads evaluated alongside the social policy.
#[derive(Clone, Debug)]
pub struct Reference<'a> {
    pub net: &'a PolicyNet<f32>,
    pub anchors: PreferenceAnchors,
    pub rule: ReferenceRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recorder {
    Ego,
    Social,
    Nobody,
}

/// One decision of a recorded agent.
#[derive(Clone, Debug)]
pub struct Record {
    /// Featurised observation; empty for light records.
    pub obs: EncodedObs,
    /// Recurrent state entering this step; empty for light records.
    pub hidden: Vec<f64>,
    pub beta: f64,
    pub head: usize,
    pub action: ActionIndex,
    pub log_prob: f64,
    pub value: f64,
    pub probs: [f64; N_ACTIONS],
    pub reward: f64,
    /// The agent's vehicle finished (goal or fail) on this step.
    pub done: bool,
    /// One stream per vehicle life; advantages are computed per stream.
    pub stream: usize,
    pub episode: u64,
    /// Anchor index matched by the vehicle's preference.
    pub anchor: Option<usize>,
    /// Frozen guiding distribution at this step, for matched vehicles.
    pub guide: Option<[f64; N_ACTIONS]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    /// Index of the social setup used.
    pub setup: usize,
    pub outcome: EpisodeOutcome,
    pub ego_return: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifeSummary {
    pub beta: f64,
    pub social_return: f64,
    pub steps: usize,
    pub flag: Flag,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub records: Vec<Record>,
    /// Value estimate after the last record of each stream that did not end
    /// in a terminal step.
    pub bootstrap: BTreeMap<usize, f64>,
    pub episodes: Vec<EpisodeSummary>,
    pub lives: Vec<LifeSummary>,
    pub discarded_episodes: usize,
    /// Social-vehicle history windows, when harvesting is enabled.
    pub windows: Vec<Vec<f64>>,
}

pub struct RunnerSpec<'a> {
    pub config: &'a Config,
    pub ego: EgoDriver<'a>,
    /// Social setups with their per-episode selection probabilities.
    pub mix: Vec<(f64, SocialSetup<'a>)>,
    pub reference: Option<Reference<'a>>,
    pub record: Recorder,
    /// Keep observations and recurrent states in records (needed for training).
    pub full_records: bool,
    /// Collect full-length history windows of social vehicles every few steps.
    pub harvest_windows: bool,
    pub n_envs: usize,
    pub seed: u64,
    /// Distinguishes independent runners sharing a seed.
    pub stream_tag: u64,
}

#[derive(Clone, Debug)]
struct AgentSlot {
    beta: f64,
    hidden: Vec<f64>,
    ref_hidden: Vec<f64>,
    anchor: Option<usize>,
    history: VecDeque<PhysicalRow>,
    style: IdmParams,
    stream: usize,
    life_return: f64,
    life_steps: usize,
}

struct EnvSlot {
    env: Intersection,
    episode: u64,
    setup: usize,
    rng: ChaCha8Rng,
    agents: Vec<AgentSlot>,
    ego_return: f64,
    steps: usize,
}

pub struct Runner<'a> {
    spec: RunnerSpec<'a>,
    envs: Vec<Option<EnvSlot>>,
    next_episode: u64,
    episode_limit: Option<u64>,
    next_stream: usize,
    conservative: IdmParams,
    aggressive: IdmParams,
    trace: Option<TraceWriter<Box<dyn Write + 'a>>>,
}

/// Steps between harvested windows of one vehicle, to thin out overlap.
const WINDOW_STRIDE: usize = 5;

fn missing_learner() -> Error {
    Error::Contract("this runner drives the learning network, which must be supplied".into())
}

/// Pending bootstrap request: stream, environment, agent.
type BootstrapAt = (usize, usize, usize);

impl<'a> Runner<'a> {
    pub fn new(spec: RunnerSpec<'a>) -> Result<Self> {
        if spec.mix.is_empty() || spec.n_envs == 0 {
            return Err(Error::Contract("a runner needs at least one social setup and one environment".into()));
        }
        let total: f64 = spec.mix.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > 1e-9 || spec.mix.iter().any(|(p, _)| *p < 0.0) {
            return Err(Error::Contract("social setup probabilities must sum to one".into()));
        }
        if spec.record == Recorder::Social
            && spec.mix.iter().any(|(p, s)| *p > 0.0 && matches!(s.driver, SocialDriver::Idm))
        {
            return Err(Error::Contract("recording social agents requires a policy driver".into()));
        }
        if spec.record == Recorder::Ego && !matches!(spec.ego, EgoDriver::Policy { .. } | EgoDriver::Learner) {
            return Err(Error::Contract("recording the ego requires an ego policy".into()));
        }
        let conservative = spec.config.idm.preset(IDM_CONSERVATIVE)?.clone();
        let aggressive = spec.config.idm.preset(IDM_AGGRESSIVE)?.clone();
        let n = spec.n_envs;
        Ok(Runner {
            spec,
            envs: (0..n).map(|_| None).collect(),
            next_episode: 0,
            episode_limit: None,
            next_stream: 0,
            conservative,
            aggressive,
            trace: None,
        })
    }

    /// Writes one trace line per environment step.
    pub fn with_trace(mut self, out: Box<dyn Write + 'a>) -> Self {
        self.trace = Some(TraceWriter::new(out));
        self
    }

    pub fn finish_trace(&mut self) -> Result<()> {
        if let Some(t) = self.trace.as_mut() {
            t.flush()?;
        }
        Ok(())
    }

    fn hidden_width(&self) -> usize {
        self.spec.config.network.recurrent_width
    }

    fn draw_style(&self, rng: &mut ChaCha8Rng) -> IdmParams {
        if rng.gen_bool(self.spec.config.idm.conservative_fraction) {
            self.conservative.clone()
        } else {
            self.aggressive.clone()
        }
    }

    fn new_agent(&mut self, env: &Intersection, agent: usize, rng: &mut ChaCha8Rng) -> AgentSlot {
        let beta = env.state().preference(agent).map_or(0.0, |p| p.0);
        let h = self.hidden_width();
        let anchor = match (&self.spec.reference, env.state().preference(agent)) {
            (Some(r), Some(beta)) => match r.rule {
                ReferenceRule::WithinDistance => r.anchors.matched(beta.0),
                ReferenceRule::Nearest => Some(r.anchors.nearest(beta.0)),
            },
            _ => None,
        };
        let stream = self.next_stream;
        self.next_stream += 1;
        AgentSlot {
            beta,
            hidden: vec![0.0; h],
            ref_hidden: vec![0.0; h],
            anchor,
            history: VecDeque::from([PhysicalRow::from(env.state().vehicle(agent))]),
            style: self.draw_style(rng),
            stream,
            life_return: 0.0,
            life_steps: 0,
        }
    }

    fn start_episode(&mut self) -> Result<Option<EnvSlot>> {
        if self.episode_limit.is_some_and(|l| self.next_episode >= l) {
            return Ok(None);
        }
        let episode = self.next_episode;
        self.next_episode += 1;
        let base = [self.spec.stream_tag, episode];
        let mut rng = rng::stream(self.spec.seed, &[base[0], base[1], rng::tag("episode")]);
        let u: f64 = rng.gen();
        let mut setup = self.spec.mix.len() - 1;
        let mut acc = 0.0;
        for (k, (p, _)) in self.spec.mix.iter().enumerate() {
            acc += p;
            if u < acc {
                setup = k;
                break;
            }
        }
        let sampler = self.spec.mix[setup].1.sampler.clone();
        let env_seed = rng::derive_seed(self.spec.seed, &[base[0], base[1], rng::tag("spawn")]);
        let env = Intersection::spawn_seeded(&self.spec.config.scenario, sampler, env_seed)?;
        let agents = (0..env.n_agents()).map(|a| self.new_agent(&env, a, &mut rng)).collect();
        Ok(Some(EnvSlot { env, episode, setup, rng, agents, ego_return: 0.0, steps: 0 }))
    }

    fn fill_envs(&mut self) -> Result<()> {
        for i in 0..self.envs.len() {
            if self.envs[i].is_none() {
                self.envs[i] = self.start_episode()?;
            }
        }
        Ok(())
    }

    fn ego_latents(&self, net: &PolicyNet<f32>, slots: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
        let traj = net.traj().ok_or_else(|| Error::Contract("ego network has no trajectory encoder".into()))?;
        let h = traj.history;
        let l = traj.latent_dim();
        let mut hists = Vec::new();
        let mut at = Vec::new();
        let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(slots.len());
        for (si, &e) in slots.iter().enumerate() {
            let slot = self.envs[e].as_ref().expect("active");
            out.push(vec![vec![0.0; l]; slot.agents.len()]);
            for (a, ag) in slot.agents.iter().enumerate().skip(1) {
                if ag.history.len() >= h {
                    let rows: Vec<PhysicalRow> = ag.history.iter().copied().collect();
                    hists.push(history_features(&rows, h)?);
                    at.push((si, a));
                }
            }
        }
        let lat = traj.infer(&net.store, &hists)?;
        for ((si, a), z) in at.into_iter().zip(lat) {
            out[si][a] = z;
        }
        Ok(out)
    }

    fn run_net(
        net: &PolicyNet<f32>,
        items: &[(EncodedObs, Vec<f64>, f64, usize)],
    ) -> Result<(Vec<PolicyOutput>, Vec<Vec<f64>>)> {
        let obs: Vec<&EncodedObs> = items.iter().map(|i| &i.0).collect();
        let hidden: Vec<&[f64]> = items.iter().map(|i| i.1.as_slice()).collect();
        let betas: Vec<f64> = items.iter().map(|i| i.2).collect();
        let heads: Vec<usize> = items.iter().map(|i| i.3).collect();
        let batch = SetBatch::<f32>::new(&obs, &hidden, &betas)?;
        let ev = net.evaluate(&batch, &heads)?;
        let hs = (0..ev.hidden.rows()).map(|r| ev.hidden.row(r).iter().map(|&v| v as f64).collect()).collect();
        Ok((ev.outputs, hs))
    }

    fn social_head(net: &PolicyNet<f32>, rule: HeadRule, beta: f64) -> Result<usize> {
        match rule {
            HeadRule::Fixed(h) => Ok(h),
            HeadRule::Anchor => net.anchor_head(beta),
        }
    }

    fn light(&self) -> bool {
        !self.spec.full_records
    }

    /// Advances every active environment by one step.
    fn ego_net<'n>(&self, learner: Option<&'n PolicyNet<f32>>) -> Result<Option<(&'n PolicyNet<f32>, bool)>>
    where
        'a: 'n,
    {
        match self.spec.ego {
            EgoDriver::Random => Ok(None),
            EgoDriver::Policy { net, greedy } => Ok(Some((net, greedy))),
            EgoDriver::Learner => Ok(Some((learner.ok_or_else(missing_learner)?, false))),
        }
    }

    fn social_net<'n>(
        driver: SocialDriver<'a>,
        learner: Option<&'n PolicyNet<f32>>,
    ) -> Result<Option<(&'n PolicyNet<f32>, HeadRule, bool)>>
    where
        'a: 'n,
    {
        match driver {
            SocialDriver::Idm => Ok(None),
            SocialDriver::Policy { net, heads, greedy } => Ok(Some((net, heads, greedy))),
            SocialDriver::Learner { heads } => Ok(Some((learner.ok_or_else(missing_learner)?, heads, false))),
        }
    }

    fn step_all(
        &mut self,
        learner: Option<&PolicyNet<f32>>,
        batch: &mut RolloutBatch,
        pending: &mut Vec<BootstrapAt>,
    ) -> Result<()> {
        let active: Vec<usize> = (0..self.envs.len()).filter(|&i| self.envs[i].is_some()).collect();
        if active.is_empty() {
            return Ok(());
        }
        let mut actions: Vec<Vec<ActionIndex>> = active
            .iter()
            .map(|&e| vec![ActionIndex::STOP; self.envs[e].as_ref().expect("active").agents.len()])
            .collect();
        // (slot in `active`, agent, record index)
        let mut new_records: Vec<(usize, usize, usize)> = Vec::new();

        // ego decisions
        match self.ego_net(learner)? {
            None => {
                for (si, &e) in active.iter().enumerate() {
                    let slot = self.envs[e].as_mut().expect("active");
                    actions[si][0] = ActionIndex::new(slot.rng.gen_range(0..N_ACTIONS))?;
                }
            }
            Some((net, greedy)) => {
                let latents = self.ego_latents(net, &active)?;
                let l = net.config().latent_dim;
                let mut items = Vec::with_capacity(active.len());
                for (si, &e) in active.iter().enumerate() {
                    let slot = self.envs[e].as_ref().expect("active");
                    let obs = EncodedObs::ego(&slot.env.observe(0)?, &latents[si], l)?;
                    items.push((obs, slot.agents[0].hidden.clone(), 0.0, 0));
                }
                let (outs, hidden) = Self::run_net(net, &items)?;
                for (si, ((item, out), h)) in items.into_iter().zip(outs).zip(hidden).enumerate() {
                    let e = active[si];
                    let light = self.light();
                    let slot = self.envs[e].as_mut().expect("active");
                    let a = if greedy { out.greedy() } else { out.sample(&mut slot.rng) };
                    actions[si][0] = a;
                    if self.spec.record == Recorder::Ego {
                        let (obs, hid, _, _) = item;
                        batch.records.push(Record {
                            obs: if light { EncodedObs { width: obs.width, features: Vec::new(), viewer: 0 } } else { obs },
                            hidden: if light { Vec::new() } else { hid },
                            beta: 0.0,
                            head: 0,
                            action: a,
                            log_prob: out.log_prob(a),
                            value: out.value,
                            probs: out.probs,
                            reward: 0.0,
                            done: false,
                            stream: slot.agents[0].stream,
                            episode: slot.episode,
                            anchor: None,
                            guide: None,
                        });
                        new_records.push((si, 0, batch.records.len() - 1));
                    }
                    slot.agents[0].hidden = h;
                }
            }
        }

        // social decisions, batched per setup
        for setup in 0..self.spec.mix.len() {
            let driver = self.spec.mix[setup].1.driver;
            let members: Vec<usize> =
                (0..active.len()).filter(|&si| self.envs[active[si]].as_ref().expect("active").setup == setup).collect();
            if members.is_empty() {
                continue;
            }
            match Self::social_net(driver, learner)? {
                None => {
                    for &si in &members {
                        let slot = self.envs[active[si]].as_ref().expect("active");
                        for a in 1..slot.agents.len() {
                            let obs = slot.env.observe(a)?;
                            actions[si][a] = idm_policy(&obs, slot.env.config(), slot.env.geometry(), &slot.agents[a].style)?;
                        }
                    }
                }
                Some((net, heads, greedy)) => {
                    let mut items = Vec::new();
                    let mut at = Vec::new();
                    for &si in &members {
                        let slot = self.envs[active[si]].as_ref().expect("active");
                        for a in 1..slot.agents.len() {
                            let beta = slot.env.state().preference(a).expect("social").0;
                            let obs = EncodedObs::social(&slot.env.observe(a)?)?;
                            let head = Self::social_head(net, heads, beta)?;
                            items.push((obs, slot.agents[a].hidden.clone(), beta, head));
                            at.push((si, a));
                        }
                    }
                    if items.is_empty() {
                        continue;
                    }
                    // frozen guiding distributions for matched vehicles
                    let mut guides: Vec<Option<[f64; N_ACTIONS]>> = vec![None; items.len()];
                    if let Some(r) = &self.spec.reference {
                        let mut ref_items = Vec::new();
                        let mut ref_at = Vec::new();
                        for (k, &(si, a)) in at.iter().enumerate() {
                            let ag = &self.envs[active[si]].as_ref().expect("active").agents[a];
                            if let Some(anchor) = ag.anchor {
                                let head = r.net.anchor_head(r.anchors.anchors()[anchor])?;
                                ref_items.push((items[k].0.clone(), ag.ref_hidden.clone(), items[k].2, head));
                                ref_at.push(k);
                            }
                        }
                        if !ref_items.is_empty() {
                            let (outs, hs) = Self::run_net(r.net, &ref_items)?;
                            for ((k, out), h) in ref_at.into_iter().zip(outs).zip(hs) {
                                guides[k] = Some(out.probs);
                                let (si, a) = at[k];
                                self.envs[active[si]].as_mut().expect("active").agents[a].ref_hidden = h;
                            }
                        }
                    }
                    let (outs, hidden) = Self::run_net(net, &items)?;
                    let light = self.light();
                    for (k, ((item, out), h)) in items.into_iter().zip(outs).zip(hidden).enumerate() {
                        let (si, a) = at[k];
                        let slot = self.envs[active[si]].as_mut().expect("active");
                        let act = if greedy { out.greedy() } else { out.sample(&mut slot.rng) };
                        actions[si][a] = act;
                        if self.spec.record == Recorder::Social {
                            let (obs, hid, beta, head) = item;
                            batch.records.push(Record {
                                obs: if light { EncodedObs { width: obs.width, features: Vec::new(), viewer: obs.viewer } } else { obs },
                                hidden: if light { Vec::new() } else { hid },
                                beta,
                                head,
                                action: act,
                                log_prob: out.log_prob(act),
                                value: out.value,
                                probs: out.probs,
                                reward: 0.0,
                                done: false,
                                stream: slot.agents[a].stream,
                                episode: slot.episode,
                                anchor: slot.agents[a].anchor,
                                guide: guides[k],
                            });
                            new_records.push((si, a, batch.records.len() - 1));
                        }
                        slot.agents[a].hidden = h;
                    }
                }
            }
        }

        if self.spec.harvest_windows {
            let h = self.spec.config.network.history_len;
            for &e in &active {
                let slot = self.envs[e].as_ref().expect("active");
                if slot.steps % WINDOW_STRIDE != 0 {
                    continue;
                }
                for ag in slot.agents.iter().skip(1).filter(|ag| ag.history.len() >= h) {
                    let rows: Vec<PhysicalRow> = ag.history.iter().copied().collect();
                    batch.windows.push(history_features(&rows, h)?);
                }
            }
        }

        // advance the environments
        let mut finished = Vec::new();
        for (si, &e) in active.iter().enumerate() {
            let mut slot = self.envs[e].take().expect("active");
            let before = self.trace.is_some().then(|| slot.env.state().clone());
            let out = match slot.env.step(&actions[si]) {
                Ok(out) => out,
                Err(err) => {
                    log::warn!("episode {} discarded after environment fault: {err}", slot.episode);
                    let ep = slot.episode;
                    batch.records.retain(|r| r.episode != ep);
                    new_records.retain(|&(s, _, _)| s != si);
                    batch.discarded_episodes += 1;
                    finished.push(e);
                    continue;
                }
            };
            if let (Some(t), Some(before)) = (self.trace.as_mut(), before) {
                t.write(&TraceLine::new(slot.episode, &before, &actions[si], &out))?;
            }
            slot.steps += 1;
            slot.ego_return += out.rewards[0];
            for &(_, a, idx) in new_records.iter().filter(|r| r.0 == si) {
                let rec = &mut batch.records[idx];
                rec.reward = out.rewards[a];
                rec.done = out.flags[a] != Flag::Running;
            }
            for a in 1..slot.agents.len() {
                let ag = &mut slot.agents[a];
                ag.life_return += out.rewards[a];
                ag.life_steps += 1;
                if out.flags[a] != Flag::Running || out.episode_done {
                    batch.lives.push(LifeSummary {
                        beta: ag.beta,
                        social_return: ag.life_return,
                        steps: ag.life_steps,
                        flag: out.flags[a],
                    });
                }
            }
            if out.episode_done {
                batch.episodes.push(EpisodeSummary {
                    episode: slot.episode,
                    setup: slot.setup,
                    outcome: out.outcome.expect("finished episode has an outcome"),
                    ego_return: slot.ego_return,
                    steps: slot.steps,
                });
                // truncated streams of recorded agents need a bootstrap value
                let recorded: Vec<usize> = match self.spec.record {
                    Recorder::Ego => vec![0],
                    Recorder::Social => (1..slot.agents.len()).collect(),
                    Recorder::Nobody => vec![],
                };
                for a in recorded {
                    if out.flags[a] == Flag::Running {
                        pending.push((slot.agents[a].stream, e, a));
                    }
                }
                finished.push(e);
            } else {
                let history_len = self.spec.config.network.history_len;
                for a in 1..slot.agents.len() {
                    if out.respawned[a] {
                        let fresh = self.new_agent(&slot.env, a, &mut slot.rng);
                        slot.agents[a] = fresh;
                    } else {
                        let ag = &mut slot.agents[a];
                        ag.history.push_back(PhysicalRow::from(slot.env.state().vehicle(a)));
                        if ag.history.len() > history_len {
                            ag.history.pop_front();
                        }
                    }
                }
            }
            self.envs[e] = Some(slot);
        }

        self.resolve_bootstraps(learner, batch, pending)?;
        for e in finished {
            self.envs[e] = self.start_episode()?;
        }
        Ok(())
    }

    /// Evaluates `V` at the current observation of each pending agent.
    fn resolve_bootstraps(
        &mut self,
        learner: Option<&PolicyNet<f32>>,
        batch: &mut RolloutBatch,
        pending: &mut Vec<BootstrapAt>,
    ) -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let requests = std::mem::take(pending);
        match self.spec.record {
            Recorder::Ego => {
                let Some((net, _)) = self.ego_net(learner)? else { unreachable!("checked at construction") };
                let envs: Vec<usize> = requests.iter().map(|r| r.1).collect();
                let latents = self.ego_latents(net, &envs)?;
                let l = net.config().latent_dim;
                let mut items = Vec::new();
                for (k, &(_, e, _)) in requests.iter().enumerate() {
                    let slot = self.envs[e].as_ref().expect("active");
                    let obs = EncodedObs::ego(&slot.env.observe(0)?, &latents[k], l)?;
                    items.push((obs, slot.agents[0].hidden.clone(), 0.0, 0));
                }
                let (outs, _) = Self::run_net(net, &items)?;
                for ((stream, _, _), out) in requests.iter().zip(outs) {
                    batch.bootstrap.insert(*stream, out.value);
                }
            }
            Recorder::Social => {
                // group by setup so each request uses its own network
                for setup in 0..self.spec.mix.len() {
                    let Some((net, heads, _)) = Self::social_net(self.spec.mix[setup].1.driver, learner)? else { continue };
                    let mut items = Vec::new();
                    let mut streams = Vec::new();
                    for &(stream, e, a) in &requests {
                        let slot = self.envs[e].as_ref().expect("active");
                        if slot.setup != setup {
                            continue;
                        }
                        let beta = slot.env.state().preference(a).expect("social").0;
                        let obs = EncodedObs::social(&slot.env.observe(a)?)?;
                        items.push((obs, slot.agents[a].hidden.clone(), beta, Self::social_head(net, heads, beta)?));
                        streams.push(stream);
                    }
                    if items.is_empty() {
                        continue;
                    }
                    let (outs, _) = Self::run_net(net, &items)?;
                    for (s, out) in streams.into_iter().zip(outs) {
                        batch.bootstrap.insert(s, out.value);
                    }
                }
            }
            Recorder::Nobody => {}
        }
        Ok(())
    }

    /// Collects exactly `n` records of the recorded agents. Environments keep
    /// running across calls.
    pub fn collect(&mut self, learner: Option<&PolicyNet<f32>>, n: usize) -> Result<RolloutBatch> {
        if self.spec.record == Recorder::Nobody {
            return Err(Error::Contract("collect needs a recorded agent".into()));
        }
        let mut batch = RolloutBatch::default();
        let mut pending = Vec::new();
        self.fill_envs()?;
        while batch.records.len() < n {
            self.step_all(learner, &mut batch, &mut pending)?;
        }
        // records past the budget are dropped; their stream bootstraps from
        // the first dropped value, which estimates the state after the last kept step
        for r in batch.records.drain(n..).collect::<Vec<_>>() {
            batch.bootstrap.entry(r.stream).or_insert(r.value);
        }
        // streams still running at the end bootstrap from the current state
        let last_done: BTreeMap<usize, bool> = batch.records.iter().map(|r| (r.stream, r.done)).collect();
        let mut live = Vec::new();
        for (e, slot) in self.envs.iter().enumerate() {
            let Some(slot) = slot else { continue };
            let agents: Vec<usize> = match self.spec.record {
                Recorder::Ego => vec![0],
                _ => (1..slot.agents.len()).collect(),
            };
            for a in agents {
                let s = slot.agents[a].stream;
                if last_done.get(&s) == Some(&false) && !batch.bootstrap.contains_key(&s) {
                    live.push((s, e, a));
                }
            }
        }
        self.resolve_bootstraps(learner, &mut batch, &mut live)?;
        Ok(batch)
    }

    /// Runs exactly `n` further episodes to completion.
    pub fn run_episodes(&mut self, learner: Option<&PolicyNet<f32>>, n: u64) -> Result<RolloutBatch> {
        self.episode_limit = Some(self.next_episode + n);
        let mut batch = RolloutBatch::default();
        let mut pending = Vec::new();
        self.fill_envs()?;
        while self.envs.iter().any(|e| e.is_some()) {
            self.step_all(learner, &mut batch, &mut pending)?;
        }
        self.episode_limit = None;
        Ok(batch)
    }

    /// Steps until at least `n` history windows have been harvested.
    pub fn collect_windows(&mut self, learner: Option<&PolicyNet<f32>>, n: usize) -> Result<Vec<Vec<f64>>> {
        if !self.spec.harvest_windows {
            return Err(Error::Contract("window harvesting is disabled for this runner".into()));
        }
        let mut batch = RolloutBatch::default();
        let mut pending = Vec::new();
        self.fill_envs()?;
        while batch.windows.len() < n {
            self.step_all(learner, &mut batch, &mut pending)?;
        }
        batch.windows.truncate(n);
        Ok(batch.windows)
    }

    /// Steps until at least `n` records exist, finishing no episodes early.
    pub fn collect_light(&mut self, learner: Option<&PolicyNet<f32>>, n: usize) -> Result<RolloutBatch> {
        let mut batch = RolloutBatch::default();
        let mut pending = Vec::new();
        self.fill_envs()?;
        while batch.records.len() < n {
            self.step_all(learner, &mut batch, &mut pending)?;
        }
        batch.records.truncate(n);
        Ok(batch)
    }
}
