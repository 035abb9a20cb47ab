//! Gradient checks of each network through the losses used in training.

use gmrl::ad::{Graph, Tensor, Var};
use gmrl::config::{PpoConfig, ScenarioConfig};
use gmrl::nets::{history_features, Bind, EncodedObs, Forward, PolicyNet, SetBatch};
use gmrl::sim::{ActionIndex, Intersection, PhysicalRow, PreferenceSampler};
use gmrl::train::{ppo_loss, reg_loss, PpoTargets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, small_network, GradCheck};

pub const GUIDING_ANCHORS: [f64; 5] = [-1.0, 0.0, 1.0, 2.0, 3.0];

fn scene() -> Intersection {
    let cfg = ScenarioConfig::default();
    let mut env = Intersection::spawn_seeded(&cfg, PreferenceSampler::Uniform { lo: -1.0, hi: 3.0 }, 11).unwrap();
    // move a little so velocities and relative positions are non-trivial
    for _ in 0..15 {
        env.step(&vec![ActionIndex::CRUISE; env.n_agents()]).unwrap();
    }
    env
}

fn social_batch(hidden_width: usize, rng: &mut ChaCha8Rng) -> SetBatch<f64> {
    let env = scene();
    let obs: Vec<EncodedObs> = (1..env.n_agents()).map(|i| EncodedObs::social(&env.observe(i).unwrap()).unwrap()).collect();
    let hidden: Vec<Vec<f64>> = obs.iter().map(|_| (0..hidden_width).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let betas: Vec<f64> = obs.iter().map(|_| rng.gen_range(-1.0..3.0)).collect();
    let o: Vec<&EncodedObs> = obs.iter().collect();
    let h: Vec<&[f64]> = hidden.iter().map(|v| v.as_slice()).collect();
    SetBatch::new(&o, &h, &betas).unwrap()
}

fn targets(n: usize, rng: &mut ChaCha8Rng) -> PpoTargets {
    PpoTargets {
        actions: (0..n).map(|_| rng.gen_range(0..3)).collect(),
        old_log_probs: (0..n).map(|_| rng.gen_range(-1.3..-0.9)).collect(),
        advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        value_targets: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn ppo_total(g: &mut Graph<f64>, f: &Forward, t: &PpoTargets) -> Var {
    // a wide clip keeps every ratio away from the clip kinks
    let cfg = PpoConfig { clip: 10.0, ..PpoConfig::default() };
    ppo_loss(g, f, t, &cfg).unwrap().total
}

fn ppo_only(net: &PolicyNet<f64>, g: &mut Graph<f64>, batch: &SetBatch<f64>, heads: &[usize], t: &PpoTargets) -> Var {
    let f = net.forward(g, batch, heads, Bind::Train).unwrap();
    ppo_total(g, &f, t)
}

/// Meta network under PPO plus the guide term: shared encoder, then head.
pub fn meta(per_param: usize) -> Vec<(&'static str, Vec<GradCheck>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = PolicyNet::<f64>::meta(&small_network(), 3).unwrap();
    let batch = social_batch(net.hidden_width(), &mut rng);
    let heads = vec![0; batch.len()];
    let t = targets(batch.len(), &mut rng);
    let guides: Vec<Option<[f64; 3]>> = (0..batch.len()).map(|i| (i % 2 == 0).then_some([0.2, 0.3, 0.5])).collect();
    let loss = |net: &PolicyNet<f64>, g: &mut Graph<f64>| {
        let f = net.forward(g, &batch, &heads, Bind::Train).unwrap();
        let total = ppo_total(g, &f, &t);
        let reg = reg_loss(g, f.log_probs, &guides).unwrap();
        let reg = g.scale(reg, 0.5);
        g.add(total, reg).unwrap()
    };
    vec![
        ("backbone", check_gradients(&mut net, "encoder.", per_param, 10, &loss)),
        ("meta head", check_gradients(&mut net, "head.meta.", per_param, 11, &loss)),
    ]
}

/// Guiding network with rows spread over the first three heads; the last
/// two heads see no rows.
pub fn guiding(per_param: usize) -> Vec<(&'static str, Vec<GradCheck>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = PolicyNet::<f64>::guiding(&small_network(), &GUIDING_ANCHORS, 4).unwrap();
    let batch = social_batch(net.hidden_width(), &mut rng);
    let heads: Vec<usize> = (0..batch.len()).map(|i| i % 3).collect();
    let t = targets(batch.len(), &mut rng);
    let loss = |net: &PolicyNet<f64>, g: &mut Graph<f64>| ppo_only(net, g, &batch, &heads, &t);
    vec![("guiding heads", check_gradients(&mut net, "head.", per_param, 12, &loss))]
}

pub fn ego(per_param: usize) -> Vec<(&'static str, Vec<GradCheck>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = small_network();
    let mut net = PolicyNet::<f64>::ego(&cfg, 5).unwrap();
    let env = scene();
    let obs = env.observe(0).unwrap();
    let latents: Vec<Vec<f64>> =
        (0..obs.n_rows()).map(|_| (0..cfg.latent_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let enc = EncodedObs::ego(&obs, &latents, cfg.latent_dim).unwrap();
    let hidden: Vec<Vec<f64>> = (0..3).map(|_| (0..net.hidden_width()).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let h: Vec<&[f64]> = hidden.iter().map(|v| v.as_slice()).collect();
    let batch = SetBatch::new(&[&enc, &enc, &enc], &h, &[0.0; 3]).unwrap();
    let heads = vec![0; 3];
    let t = targets(3, &mut rng);
    let loss = |net: &PolicyNet<f64>, g: &mut Graph<f64>| ppo_only(net, g, &batch, &heads, &t);
    vec![
        ("ego backbone", check_gradients(&mut net, "encoder.", per_param, 13, &loss)),
        ("ego head", check_gradients(&mut net, "head.ego.", per_param, 14, &loss)),
    ]
}

/// Reconstruction loss of the trajectory autoencoder on real histories.
pub fn autoencoder(per_param: usize) -> Vec<(&'static str, Vec<GradCheck>)> {
    let cfg = small_network();
    let mut net = PolicyNet::<f64>::ego(&cfg, 6).unwrap();
    let mut env = scene();
    let mut histories: Vec<Vec<PhysicalRow>> = vec![Vec::new(); env.n_agents()];
    for _ in 0..cfg.history_len {
        for (a, h) in histories.iter_mut().enumerate() {
            h.push(*env.observe(0).unwrap().physical(a));
        }
        env.step(&vec![ActionIndex::CREEP; env.n_agents()]).unwrap();
    }
    let flat: Vec<f64> = histories[1..].iter().flat_map(|h| history_features(h, cfg.history_len).unwrap()).collect();
    let rows = histories.len() - 1;
    let x = Tensor::from_f64(rows, flat.len() / rows, &flat).unwrap();
    let loss = |net: &PolicyNet<f64>, g: &mut Graph<f64>| {
        let xs = g.constant(x.clone());
        net.traj().unwrap().recon_loss(g, &net.store, xs, Bind::Train).unwrap()
    };
    vec![("trajectory autoencoder", check_gradients(&mut net, "traj.", per_param, 15, &loss))]
}

/// Every suite, in a fixed order.
pub fn all(per_param: usize) -> Vec<(&'static str, Vec<GradCheck>)> {
    let mut out = meta(per_param);
    out.extend(guiding(per_param));
    out.extend(ego(per_param));
    out.extend(autoencoder(per_param));
    out
}
