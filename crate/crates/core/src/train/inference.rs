//! Fitting the ego's trajectory autoencoder on harvested history windows.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::ad::{Adam, Graph, Scalar, Tensor};
use crate::config::InferenceConfig;
use crate::error::{Error, Result};
use crate::nets::{Bind, PolicyNet};

/// Parameter-name prefix of the trajectory autoencoder inside an ego network.
pub const TRAJ_PREFIX: &str = "traj.";

/// Trains only the autoencoder parameters of `net` on `windows` and returns
/// the mean reconstruction loss of each epoch. Optimizer state is reset
/// before and after, and on return the autoencoder is frozen while the
/// rest of the network is trainable.
pub fn train_autoencoder(
    net: &mut PolicyNet<f32>,
    windows: &[Vec<f64>],
    cfg: &InferenceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let traj = net.traj().cloned().ok_or_else(|| Error::Contract("network has no trajectory encoder".into()))?;
    if windows.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let ids: Vec<_> = net.store.ids().collect();
    for &id in &ids {
        let is_traj = net.store.name(id).starts_with(TRAJ_PREFIX);
        net.store.set_frozen(id, !is_traj);
    }
    net.store.reset_optimizer();
    let adam = Adam::default();
    let width = windows[0].len();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let flat: Vec<f64> = chunk.iter().flat_map(|&i| windows[i].iter().copied()).collect();
            let mut g = Graph::<f32>::new();
            let x = g.constant(Tensor::from_f64(chunk.len(), width, &flat)?);
            let loss = traj.recon_loss(&mut g, &net.store, x, Bind::Train)?;
            let value = g.value(loss).item().f64();
            if !value.is_finite() {
                log::warn!("non-finite reconstruction loss; minibatch skipped");
                continue;
            }
            let grads = g.backward(loss)?;
            net.store.zero_grad();
            net.store.accumulate(&grads);
            adam.step(&mut net.store, cfg.lr);
            sum += value * chunk.len() as f64;
            count += chunk.len();
        }
        losses.push(if count > 0 { sum / count as f64 } else { f64::NAN });
    }
    for &id in &ids {
        let is_traj = net.store.name(id).starts_with(TRAJ_PREFIX);
        net.store.set_frozen(id, is_traj);
    }
    net.store.reset_optimizer();
    Ok(losses)
}
