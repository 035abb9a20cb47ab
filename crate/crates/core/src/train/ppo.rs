//! One PPO update over a collected batch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ad::{Adam, Graph, LinearDecay, Scalar};
use crate::config::PpoConfig;
use crate::error::{Error, Result};
use crate::nets::{Bind, EncodedObs, PolicyNet, SetBatch};
use crate::train::gae::{compute_gae, normalize};
use crate::train::loss::{ppo_loss, reg_loss, PpoTargets};
use crate::train::rollout::RolloutBatch;

/// Advantages and value targets per record, computed stream by stream.
pub fn stream_advantages(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut streams: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in batch.records.iter().enumerate() {
        streams.entry(r.stream).or_default().push(i);
    }
    let n = batch.records.len();
    let (mut adv, mut targets) = (vec![0.0; n], vec![0.0; n]);
    for (stream, idx) in streams {
        let rewards: Vec<f64> = idx.iter().map(|&i| batch.records[i].reward).collect();
        let values: Vec<f64> = idx.iter().map(|&i| batch.records[i].value).collect();
        let dones: Vec<bool> = idx.iter().map(|&i| batch.records[i].done).collect();
        let boot = batch.bootstrap.get(&stream).copied().unwrap_or(0.0);
        let (a, t) = compute_gae(&rewards, &values, &dones, boot, gamma, lambda);
        for (k, &i) in idx.iter().enumerate() {
            adv[i] = a[k];
            targets[i] = t[k];
        }
    }
    (adv, targets)
}

/// Normalises advantages separately within each head's records.
pub fn normalize_per_head(adv: &mut [f64], heads: &[usize]) {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &h) in heads.iter().enumerate() {
        groups.entry(h).or_default().push(i);
    }
    for idx in groups.values() {
        let mut v: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
        normalize(&mut v);
        for (k, &i) in idx.iter().enumerate() {
            adv[i] = v[k];
        }
    }
}

/// Mean loss terms over the minibatches of one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    /// Sample estimate of `KL(old ‖ new)` before each minibatch step.
    pub mean_kl: f64,
    pub dropped_batches: usize,
    pub lr: f64,
}

pub struct PpoLearner {
    cfg: PpoConfig,
    adam: Adam,
    schedule: LinearDecay,
    updates: u64,
    reg_weight: f64,
    per_head_norm: bool,
    max_drops: usize,
    consecutive_drops: usize,
    rng: ChaCha8Rng,
}

impl PpoLearner {
    /// `total_updates` is the number of optimizer steps the learning rate
    /// decays over.
    pub fn new(cfg: PpoConfig, total_updates: u64, rng: ChaCha8Rng) -> Self {
        PpoLearner {
            schedule: LinearDecay { initial: cfg.lr, total: total_updates },
            cfg,
            adam: Adam::default(),
            updates: 0,
            reg_weight: 0.0,
            per_head_norm: false,
            max_drops: 5,
            consecutive_drops: 0,
            rng,
        }
    }

    /// Optimizer steps per update for a batch of `records`.
    pub fn steps_per_update(cfg: &PpoConfig, records: usize) -> u64 {
        (cfg.epochs * records.div_ceil(cfg.minibatch)) as u64
    }

    /// Weight of the guide regulariser; zero leaves it out of the objective.
    pub fn with_reg_weight(mut self, w: f64) -> Self {
        self.reg_weight = w;
        self
    }

    pub fn with_per_head_normalization(mut self, on: bool) -> Self {
        self.per_head_norm = on;
        self
    }

    pub fn with_max_drops(mut self, n: usize) -> Self {
        self.max_drops = n;
        self
    }

    pub fn update(&mut self, net: &mut PolicyNet<f32>, batch: &RolloutBatch) -> Result<UpdateStats> {
        let n = batch.records.len();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let (mut adv, targets) = stream_advantages(batch, self.cfg.gamma, self.cfg.gae_lambda);
        if self.per_head_norm {
            let heads: Vec<usize> = batch.records.iter().map(|r| r.head).collect();
            normalize_per_head(&mut adv, &heads);
        } else {
            normalize(&mut adv);
        }
        let mut stats = UpdateStats::default();
        let mut counted = 0usize;
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                let lr = self.schedule.at(self.updates);
                self.updates += 1;
                let recs: Vec<_> = chunk.iter().map(|&i| &batch.records[i]).collect();
                let obs: Vec<&EncodedObs> = recs.iter().map(|r| &r.obs).collect();
                let hidden: Vec<&[f64]> = recs.iter().map(|r| r.hidden.as_slice()).collect();
                let betas: Vec<f64> = recs.iter().map(|r| r.beta).collect();
                let heads: Vec<usize> = recs.iter().map(|r| r.head).collect();
                let sb = SetBatch::<f32>::new(&obs, &hidden, &betas)?;
                let mut g = Graph::new();
                let fwd = net.forward(&mut g, &sb, &heads, Bind::Train)?;
                let t = PpoTargets {
                    actions: recs.iter().map(|r| r.action.index()).collect(),
                    old_log_probs: recs.iter().map(|r| r.log_prob).collect(),
                    advantages: chunk.iter().map(|&i| adv[i]).collect(),
                    value_targets: chunk.iter().map(|&i| targets[i]).collect(),
                };
                let terms = ppo_loss(&mut g, &fwd, &t, &self.cfg)?;
                let guides: Vec<_> = recs.iter().map(|r| r.guide).collect();
                let reg = if guides.iter().any(Option::is_some) {
                    Some(reg_loss(&mut g, fwd.log_probs, &guides)?)
                } else {
                    None
                };
                let total = match reg {
                    Some(r) if self.reg_weight > 0.0 => {
                        let w = g.scale(r, self.reg_weight);
                        g.add(terms.total, w)?
                    }
                    _ => terms.total,
                };
                let total_value = g.value(total).item().f64();
                if !total_value.is_finite() {
                    stats.dropped_batches += 1;
                    self.consecutive_drops += 1;
                    log::warn!("non-finite loss; minibatch dropped ({} in a row)", self.consecutive_drops);
                    if self.consecutive_drops >= self.max_drops {
                        return Err(Error::TrainingAborted(format!(
                            "{} consecutive minibatches with non-finite loss",
                            self.consecutive_drops
                        )));
                    }
                    continue;
                }
                self.consecutive_drops = 0;

                let lp = g.value(fwd.log_probs);
                let kl: f64 = recs
                    .iter()
                    .enumerate()
                    .map(|(k, r)| r.log_prob - lp.get(k, r.action.index()).f64())
                    .sum::<f64>()
                    / recs.len() as f64;
                stats.policy_loss += g.value(terms.policy).item().f64();
                stats.value_loss += g.value(terms.value).item().f64();
                stats.entropy += g.value(terms.entropy).item().f64();
                stats.reg_loss += reg.map_or(0.0, |r| g.value(r).item().f64());
                stats.total_loss += total_value;
                stats.mean_kl += kl;
                stats.lr = lr;
                counted += 1;

                let grads = g.backward(total)?;
                net.store.zero_grad();
                net.store.accumulate(&grads);
                net.store.clip_grad_norm(self.cfg.max_grad_norm);
                if lr > 0.0 {
                    self.adam.step(&mut net.store, lr);
                }
            }
        }
        if counted > 0 {
            let c = counted as f64;
            for v in [
                &mut stats.policy_loss,
                &mut stats.value_loss,
                &mut stats.entropy,
                &mut stats.reg_loss,
                &mut stats.total_loss,
                &mut stats.mean_kl,
            ] {
                *v /= c;
            }
        }
        Ok(stats)
    }
}
