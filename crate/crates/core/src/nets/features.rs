//! Observation featurisation and batching for the set encoder.
//!
//! Social rows carry 8 features:
//! `x/30, y/30, vx/3, vy/3, (x−x_viewer)/30, (y−y_viewer)/30, is_ego, β`.
//! Ego rows drop `β` and append the inferred latent trait of that vehicle
//! (zeros for the ego's own row), giving `7 + latent_dim` features.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::ad::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::sim::{Observation, PhysicalRow, Role, MAX_SPEED};

pub const POSITION_SCALE: f64 = 30.0;
pub const SPEED_SCALE: f64 = MAX_SPEED;
pub const SOCIAL_FEATURES: usize = 8;
const PHYSICAL_FEATURES: usize = 7;

pub fn ego_features(latent_dim: usize) -> usize {
    PHYSICAL_FEATURES + latent_dim
}

fn physical(row: &PhysicalRow, viewer: &PhysicalRow, out: &mut Vec<f64>) {
    out.extend_from_slice(&[
        row.x / POSITION_SCALE,
        row.y / POSITION_SCALE,
        row.vx / SPEED_SCALE,
        row.vy / SPEED_SCALE,
        (row.x - viewer.x) / POSITION_SCALE,
        (row.y - viewer.y) / POSITION_SCALE,
        if row.role == Role::Ego { 1.0 } else { 0.0 },
    ]);
}

/// One featurised observation: `n_rows × width` row-major features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedObs {
    pub width: usize,
    pub features: Vec<f64>,
    /// Index of the viewer's own row.
    pub viewer: usize,
}

impl EncodedObs {
    pub fn n_rows(&self) -> usize {
        self.features.len() / self.width
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.width..(r + 1) * self.width]
    }

    /// Featurises a social observation.
    pub fn social(obs: &Observation) -> Result<EncodedObs> {
        let Observation::Social { viewer, rows } = obs else {
            return Err(Error::Contract("social features need a social observation".into()));
        };
        let v = rows[*viewer].physical;
        let mut features = Vec::with_capacity(rows.len() * SOCIAL_FEATURES);
        for r in rows {
            physical(&r.physical, &v, &mut features);
            features.push(r.preference);
        }
        Ok(EncodedObs { width: SOCIAL_FEATURES, features, viewer: *viewer })
    }

    /// Featurises an ego observation with one latent vector per row
    /// (`latents[0]`, the ego's own slot, is ignored and zeroed).
    pub fn ego(obs: &Observation, latents: &[Vec<f64>], latent_dim: usize) -> Result<EncodedObs> {
        let Observation::Ego { rows } = obs else {
            return Err(Error::Contract("ego features need an ego observation".into()));
        };
        if latents.len() != rows.len() {
            return Err(Error::Shape(format!("{} latent vectors for {} rows", latents.len(), rows.len())));
        }
        let v = rows[0];
        let width = ego_features(latent_dim);
        let mut features = Vec::with_capacity(rows.len() * width);
        for (k, r) in rows.iter().enumerate() {
            physical(r, &v, &mut features);
            if k == 0 {
                features.extend(std::iter::repeat(0.0).take(latent_dim));
            } else {
                if latents[k].len() != latent_dim {
                    return Err(Error::Shape(format!("latent of width {} (expected {latent_dim})", latents[k].len())));
                }
                features.extend_from_slice(&latents[k]);
            }
        }
        Ok(EncodedObs { width, features, viewer: 0 })
    }

    /// Returns a copy with the non-viewer rows reordered by `perm`
    /// (a permutation of the non-viewer row indices).
    pub fn permuted(&self, perm: &[usize]) -> EncodedObs {
        let others: Vec<usize> = (0..self.n_rows()).filter(|&r| r != self.viewer).collect();
        let mut features = Vec::with_capacity(self.features.len());
        let mut viewer = 0;
        let mut it = perm.iter();
        for r in 0..self.n_rows() {
            if r == self.viewer {
                viewer = r;
                features.extend_from_slice(self.row(r));
            } else {
                let src = others[*it.next().expect("permutation covers the other rows")];
                features.extend_from_slice(self.row(src));
            }
        }
        EncodedObs { width: self.width, features, viewer }
    }
}

/// A stack of observations ready for a batched forward pass.
#[derive(Clone, Debug)]
pub struct SetBatch<T> {
    pub rows: Tensor<T>,
    /// Row-group boundaries: observation `i` owns rows `offsets[i]..offsets[i+1]`.
    pub offsets: Rc<[usize]>,
    /// Absolute row index of each observation's viewer.
    pub viewers: Rc<[usize]>,
    /// Recurrent state entering this step, one row per observation.
    pub hidden: Tensor<T>,
    /// Preference fed to the meta head (ignored by other heads).
    pub betas: Vec<f64>,
}

impl<T: Scalar> SetBatch<T> {
    pub fn new(obs: &[&EncodedObs], hidden: &[&[f64]], betas: &[f64]) -> Result<SetBatch<T>> {
        if obs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if hidden.len() != obs.len() || betas.len() != obs.len() {
            return Err(Error::Shape("batch fields have different lengths".into()));
        }
        let width = obs[0].width;
        let h = hidden[0].len();
        let mut offsets = Vec::with_capacity(obs.len() + 1);
        let mut viewers = Vec::with_capacity(obs.len());
        let mut data = Vec::new();
        let mut hdata = Vec::with_capacity(obs.len() * h);
        offsets.push(0);
        for (o, hs) in obs.iter().zip(hidden) {
            if o.width != width || hs.len() != h {
                return Err(Error::Shape("mixed feature or hidden widths in one batch".into()));
            }
            if o.n_rows() == 0 {
                return Err(Error::Shape("observation without rows".into()));
            }
            let base = *offsets.last().expect("non-empty");
            viewers.push(base + o.viewer);
            offsets.push(base + o.n_rows());
            data.extend(o.features.iter().map(|&v| T::of(v)));
            hdata.extend(hs.iter().map(|&v| T::of(v)));
        }
        let total = *offsets.last().expect("non-empty");
        Ok(SetBatch {
            rows: Tensor::from_vec(total, width, data)?,
            offsets: offsets.into(),
            viewers: viewers.into(),
            hidden: Tensor::from_vec(obs.len(), h, hdata)?,
            betas: betas.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
