//! Loss terms built on the tape. All minimise: lower is better.

use std::rc::Rc;

use crate::ad::{Graph, Scalar, Tensor, Var};
use crate::config::PpoConfig;
use crate::error::{Error, Result};
use crate::nets::Forward;
use crate::sim::N_ACTIONS;

/// Per-record inputs of the PPO objective.
#[derive(Clone, Debug, Default)]
pub struct PpoTargets {
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct PpoTerms {
    /// `−mean(min(ρA, clip(ρ, 1−ε, 1+ε)A))`
    pub policy: Var,
    /// `mean((V − target)²)`
    pub value: Var,
    /// `mean(−Σ π log π)`
    pub entropy: Var,
    /// `policy + c_v · value − c_e · entropy`
    pub total: Var,
}

fn column<T: Scalar>(g: &mut Graph<T>, v: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::from_f64(v.len(), 1, v)?))
}

/// Mean policy entropy of a batch of row-wise log-probabilities.
pub fn entropy<T: Scalar>(g: &mut Graph<T>, log_probs: Var) -> Var {
    let rows = g.shape(log_probs).0;
    let p = g.exp(log_probs);
    let plogp = g.mul(p, log_probs).expect("same shape");
    let s = g.sum(plogp);
    g.scale(s, -1.0 / rows as f64)
}

pub fn ppo_loss<T: Scalar>(g: &mut Graph<T>, fwd: &Forward, t: &PpoTargets, cfg: &PpoConfig) -> Result<PpoTerms> {
    let n = t.actions.len();
    if g.shape(fwd.log_probs) != (n, N_ACTIONS)
        || t.old_log_probs.len() != n
        || t.advantages.len() != n
        || t.value_targets.len() != n
    {
        return Err(Error::Shape(format!("ppo targets for {n} records do not match the forward pass")));
    }
    let actions: Rc<[usize]> = t.actions.clone().into();
    let logp = g.pick(fwd.log_probs, actions)?;
    let old = column(g, &t.old_log_probs)?;
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let adv = column(g, &t.advantages)?;
    let surr = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let surr_clipped = g.mul(clipped, adv)?;
    let m = g.min(surr, surr_clipped)?;
    let m = g.mean(m);
    let policy = g.neg(m);

    let target = column(g, &t.value_targets)?;
    let err = g.sub(fwd.values, target)?;
    let sq = g.square(err);
    let value = g.mean(sq);

    let entropy = entropy(g, fwd.log_probs);

    let v = g.scale(value, cfg.value_coef);
    let e = g.scale(entropy, -cfg.entropy_coef);
    let pv = g.add(policy, v)?;
    let total = g.add(pv, e)?;
    Ok(PpoTerms { policy, value, entropy, total })
}

/// Categorical `KL(p ‖ q)` with the convention `0 · log 0 = 0`.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// Sum over guided records of `KL(guide ‖ π)`, where `π` is given by the
/// row-wise `log_probs` on the tape and `guides[i]` holds the frozen guide
/// distribution of record `i` (or `None` when no anchor matched). The
/// guides are constants, so gradient reaches only the network behind
/// `log_probs`.
pub fn reg_loss<T: Scalar>(g: &mut Graph<T>, log_probs: Var, guides: &[Option<[f64; N_ACTIONS]>]) -> Result<Var> {
    let n = guides.len();
    if g.shape(log_probs) != (n, N_ACTIONS) {
        return Err(Error::Shape(format!("{n} guides for a {:?} log-probability block", g.shape(log_probs))));
    }
    let mut weights = vec![0.0; n * N_ACTIONS];
    let mut self_term = 0.0;
    for (i, p) in guides.iter().enumerate() {
        if let Some(p) = p {
            for k in 0..N_ACTIONS {
                weights[i * N_ACTIONS + k] = p[k];
                if p[k] > 0.0 {
                    self_term += p[k] * p[k].ln();
                }
            }
        }
    }
    // KL = Σ p log p − Σ p log q
    let w = g.constant(Tensor::from_f64(n, N_ACTIONS, &weights)?);
    let cross = g.mul(w, log_probs)?;
    let cross = g.sum(cross);
    let neg = g.neg(cross);
    Ok(g.shift(neg, self_term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use crate::nets::{Bind, EncodedObs, PolicyNet, SetBatch};

    fn logits_block(rows: &[[f64; 3]]) -> (Graph<f64>, Var) {
        let mut g = Graph::new();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = g.input(Tensor::from_f64(rows.len(), 3, &flat).unwrap());
        let lp = g.log_softmax(x);
        (g, lp)
    }

    #[test]
    fn hand_case_kl_is_ln2() {
        let p = [1.0, 0.0, 0.0];
        let q = [0.5, 0.25, 0.25];
        assert!((categorical_kl(&p, &q) - std::f64::consts::LN_2).abs() < 1e-15);
        let (mut g, lp) = logits_block(&[[0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]]);
        let r = reg_loss(&mut g, lp, &[Some(p)]).unwrap();
        assert!((g.value(r).item() - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn no_match_means_zero() {
        let (mut g, lp) = logits_block(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]]);
        let r = reg_loss(&mut g, lp, &[None, None]).unwrap();
        assert_eq!(g.value(r).item(), 0.0);
    }

    #[test]
    fn equal_distributions_give_zero() {
        let (mut g, lp) = logits_block(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]]);
        let probs: Vec<[f64; 3]> = (0..2)
            .map(|i| {
                let v = g.value(lp);
                [v.get(i, 0).exp(), v.get(i, 1).exp(), v.get(i, 2).exp()]
            })
            .collect();
        let r = reg_loss(&mut g, lp, &[Some(probs[0]), Some(probs[1])]).unwrap();
        assert!(g.value(r).item().abs() < 1e-15);
    }

    #[test]
    fn reg_is_a_sum_over_matched_records() {
        let q = [0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        let (mut g, lp) = logits_block(&[q, q, q]);
        let p = Some([1.0, 0.0, 0.0]);
        let r = reg_loss(&mut g, lp, &[p, None, p]).unwrap();
        assert!((g.value(r).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_policy_entropy_is_ln3() {
        let (mut g, lp) = logits_block(&[[0.0; 3], [2.0; 3]]);
        let e = entropy(&mut g, lp);
        assert!((g.value(e).item() - 3f64.ln()).abs() < 1e-15);
    }

    fn forward_for(n: usize) -> (Graph<f64>, Forward, PolicyNet<f64>) {
        let cfg = NetworkConfig { embed_width: 4, pooled_width: 4, recurrent_width: 4, head_hidden: 4, ..NetworkConfig::default() };
        let net = PolicyNet::<f64>::meta(&cfg, 0).unwrap();
        let obs: Vec<EncodedObs> = (0..n)
            .map(|i| EncodedObs { width: 8, features: (0..16).map(|k| ((k + i) as f64).cos()).collect(), viewer: 0 })
            .collect();
        let h = vec![0.0; 4];
        let refs: Vec<&EncodedObs> = obs.iter().collect();
        let hs: Vec<&[f64]> = (0..n).map(|_| h.as_slice()).collect();
        let b = SetBatch::new(&refs, &hs, &vec![0.0; n]).unwrap();
        let mut g = Graph::new();
        let f = net.forward(&mut g, &b, &vec![0; n], Bind::Train).unwrap();
        (g, f, net)
    }

    #[test]
    fn unchanged_policy_with_normalized_advantages_has_zero_policy_term() {
        let (mut g, f, _) = forward_for(4);
        let lp = g.value(f.log_probs).clone();
        let actions = vec![0, 1, 2, 1];
        let old: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| lp.get(i, a)).collect();
        let mut adv = vec![1.0, -2.0, 0.5, 3.0];
        crate::train::gae::normalize(&mut adv);
        let t = PpoTargets { actions, old_log_probs: old, advantages: adv, value_targets: vec![0.0; 4] };
        let terms = ppo_loss(&mut g, &f, &t, &PpoConfig::default()).unwrap();
        assert!(g.value(terms.policy).item().abs() < 1e-15);
    }

    #[test]
    fn clipped_records_have_no_policy_gradient() {
        let (mut g, f, net) = forward_for(1);
        let lp = g.value(f.log_probs).get(0, 2);
        // old log-prob far below the current one: ratio ≫ 1 + ε with A > 0
        let t = PpoTargets { actions: vec![2], old_log_probs: vec![lp - 1.0], advantages: vec![1.0], value_targets: vec![0.0] };
        let terms = ppo_loss(&mut g, &f, &t, &PpoConfig::default()).unwrap();
        let grads = g.backward(terms.policy).unwrap();
        assert!(grads.of(f.logits).map_or(true, |t| t.data().iter().all(|&v| v == 0.0)));
        let _ = net;
    }

    #[test]
    fn value_loss_does_not_touch_policy_head() {
        let (mut g, f, net) = forward_for(3);
        let t = PpoTargets {
            actions: vec![0, 1, 2],
            old_log_probs: vec![0.0; 3],
            advantages: vec![0.0; 3],
            value_targets: vec![1.0, -1.0, 0.5],
        };
        let terms = ppo_loss(&mut g, &f, &t, &PpoConfig::default()).unwrap();
        let grads = g.backward(terms.value).unwrap();
        for (id, gr) in grads.params() {
            if net.store.name(id).contains(".pi.") {
                assert!(gr.data().iter().all(|&v| v == 0.0), "{}", net.store.name(id));
            }
        }
        let grads = g.backward(terms.entropy).unwrap();
        for (id, gr) in grads.params() {
            if net.store.name(id).contains(".v.") {
                assert!(gr.data().iter().all(|&v| v == 0.0), "{}", net.store.name(id));
            }
        }
    }
}
