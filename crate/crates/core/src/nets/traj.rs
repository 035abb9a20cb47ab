//! Recurrent trajectory autoencoder used by the ego to infer a latent trait
//! for each social vehicle from its recent motion.

use rand::Rng;

use crate::ad::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::nets::features::{POSITION_SCALE, SPEED_SCALE};
use crate::nets::layers::{Bind, Gru, Linear, Mlp};
use crate::sim::PhysicalRow;

pub const STEP_FEATURES: usize = 4;

/// Flattens the last `len` states of one vehicle (oldest first) into
/// `len × 4` features, padding the front with the earliest known state.
pub fn history_features(history: &[PhysicalRow], len: usize) -> Result<Vec<f64>> {
    let first = history.first().ok_or(Error::EmptyHistory)?;
    let tail = &history[history.len().saturating_sub(len)..];
    let pad = len - tail.len();
    let mut out = Vec::with_capacity(len * STEP_FEATURES);
    for r in std::iter::repeat(first).take(pad).chain(tail) {
        out.extend_from_slice(&[r.x / POSITION_SCALE, r.y / POSITION_SCALE, r.vx / SPEED_SCALE, r.vy / SPEED_SCALE]);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrajAutoencoder {
    pub gru: Gru,
    pub latent: Linear,
    pub decoder: Mlp,
    pub history: usize,
}

impl TrajAutoencoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(TrajAutoencoder {
            gru: Gru::new(store, &format!("{prefix}.gru"), STEP_FEATURES, cfg.traj_hidden, rng)?,
            latent: Linear::new(store, &format!("{prefix}.latent"), cfg.traj_hidden, cfg.latent_dim, 1.0, rng)?,
            decoder: Mlp::new(
                store,
                &format!("{prefix}.decoder"),
                (cfg.latent_dim, cfg.traj_decoder_hidden, cfg.history_len * STEP_FEATURES),
                1.0,
                rng,
            )?,
            history: cfg.history_len,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.outputs
    }

    /// `histories`: `B × (history · 4)`, oldest step first. Returns `B × latent`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, histories: Var, mode: Bind) -> Result<Var> {
        let (b, w) = g.shape(histories);
        if w != self.history * STEP_FEATURES {
            return Err(Error::Shape(format!("history width {w}, expected {}", self.history * STEP_FEATURES)));
        }
        let mut h = g.constant(Tensor::zeros(b, self.gru.hidden));
        for t in 0..self.history {
            let x = g.slice_cols(histories, t * STEP_FEATURES, STEP_FEATURES)?;
            h = self.gru.step(g, store, x, h, mode)?;
        }
        let z = self.latent.forward(g, store, h, mode)?;
        Ok(g.tanh(z))
    }

    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, latent: Var, mode: Bind) -> Result<Var> {
        self.decoder.forward(g, store, latent, mode)
    }

    /// Mean squared reconstruction error over a batch of histories.
    pub fn recon_loss<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, histories: Var, mode: Bind) -> Result<Var> {
        let z = self.encode(g, store, histories, mode)?;
        let rec = self.decode(g, store, z, mode)?;
        let diff = g.sub(rec, histories)?;
        let sq = g.square(diff);
        Ok(g.mean(sq))
    }

    /// Latent vectors for a set of flattened histories (no gradient).
    pub fn infer<T: Scalar>(&self, store: &ParamStore<T>, histories: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if histories.is_empty() {
            return Ok(Vec::new());
        }
        let w = self.history * STEP_FEATURES;
        let flat: Vec<f64> = histories.iter().flatten().copied().collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(histories.len(), w, &flat)?);
        let z = self.encode(&mut g, store, x, Bind::Frozen)?;
        let v = g.value(z);
        Ok((0..v.rows()).map(|r| v.row(r).iter().map(|x| x.f64()).collect()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Role;
    use rand::SeedableRng;

    fn row(x: f64) -> PhysicalRow {
        PhysicalRow { x, y: 2.0, vx: -3.0, vy: 0.0, role: Role::Social }
    }

    #[test]
    fn history_is_front_padded_and_truncated() {
        let h = history_features(&[row(3.0), row(6.0)], 3).unwrap();
        assert_eq!(h.len(), 12);
        assert_eq!(h[0], 0.1);
        assert_eq!(h[4], 0.1);
        assert_eq!(h[8], 0.2);
        let h = history_features(&[row(3.0), row(6.0), row(9.0), row(12.0)], 2).unwrap();
        assert_eq!(h[0], 0.3);
        assert!(matches!(history_features(&[], 3), Err(Error::EmptyHistory)));
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let cfg = NetworkConfig { history_len: 2, latent_dim: 1, traj_hidden: 2, traj_decoder_hidden: 2, ..NetworkConfig::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let ae = TrajAutoencoder::new(&mut store, "traj", &cfg, &mut rng).unwrap();
        // Output layer zeroed with its bias set to the target reproduces it exactly.
        let target = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8];
        store.value_mut(ae.decoder.out.w).data_mut().fill(0.0);
        store.value_mut(ae.decoder.out.b).data_mut().copy_from_slice(&target);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(1, 8, &target).unwrap());
        let loss = ae.recon_loss(&mut g, &store, x, Bind::Frozen).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn encoder_is_deterministic() {
        let cfg = NetworkConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let ae = TrajAutoencoder::new(&mut store, "traj", &cfg, &mut rng).unwrap();
        let h = history_features(&[row(3.0), row(2.7), row(2.4)], cfg.history_len).unwrap();
        let a = ae.infer(&store, &[h.clone()]).unwrap();
        let b = ae.infer(&store, &[h]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), cfg.latent_dim);
        assert!(a[0].iter().all(|v| v.is_finite()));
    }
}
