//! Named parameters, Adam moments and the JSON checkpoint format.
//!
//! A checkpoint is a single JSON object:
//!
//! ```text
//! {"format": "gmrl-params/1",
//!  "step": u64,                      // optimizer steps taken
//!  "metadata": {...},                // free-form; networks list their heads here
//!  "params": [{"name", "shape": [rows, cols], "frozen",
//!              "data": [...], "m": [...], "v": [...]}, ...]}
//! ```
//!
//! Arrays are row-major. Values are written as `f64`, which holds every
//! `f32` exactly, so loading reproduces the stored parameters bit for bit.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ad::graph::Gradients;
use crate::ad::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gmrl-params/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
    frozen: bool,
}

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, ParamId>,
    step: u64,
    pub metadata: serde_json::Value,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new(), step: 0, metadata: serde_json::Value::Null }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let (r, c) = value.shape();
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            frozen: false,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Glorot-uniform `rows × cols` weight, scaled by `gain`.
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Result<ParamId> {
        let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-limit..=limit))).collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str, frozen: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
            }
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|e| e.name.starts_with(prefix)).map(|e| e.value.len()).sum()
    }

    /// Clears Adam moments and the step counter, keeping values.
    pub fn reset_optimizer(&mut self) {
        for e in &mut self.entries {
            e.m.data_mut().fill(T::zero());
            e.v.data_mut().fill(T::zero());
        }
        self.step = 0;
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(T::zero());
        }
    }

    /// Adds every parameter gradient found on a tape to the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            let e = &mut self.entries[id.0];
            if !e.frozen {
                e.grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries.iter().filter(|e| !e.frozen).map(|e| e.grad.sum_sq()).sum::<f64>().sqrt()
    }

    /// Rescales accumulated gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm.is_finite() && norm > max_norm && max_norm > 0.0 {
            let s = T::of(max_norm / norm);
            for e in &mut self.entries {
                for g in e.grad.data_mut() {
                    *g *= s;
                }
            }
        }
        norm
    }

    /// Copies values of every parameter named in `other` (same shapes) into this store.
    pub fn load_values_from(&mut self, other: &ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for e in other.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            let id = self
                .id(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {} missing from target", e.name)))?;
            let dst = &mut self.entries[id.0].value;
            if dst.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for {}", e.name)));
            }
            *dst = e.value.clone();
            n += 1;
        }
        Ok(n)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.cast(),
                    m: e.m.cast(),
                    v: e.v.cast(),
                    frozen: e.frozen,
                })
                .collect(),
            index: self.index.clone(),
            step: self.step,
            metadata: self.metadata.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    /// One bias-corrected update from the accumulated gradients. A non-finite
    /// gradient skips the whole update (moments and step counter untouched)
    /// and returns `false`.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>, lr: f64) -> bool {
        let finite = store.entries.iter().filter(|e| !e.frozen).all(|e| e.grad.all_finite());
        if !finite {
            log::warn!("non-finite gradient at optimizer step {}; update skipped", store.step);
            return false;
        }
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (ob1, ob2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        for e in store.entries.iter_mut().filter(|e| !e.frozen) {
            let Entry { value, grad, m, v, .. } = e;
            for k in 0..value.len() {
                let g = grad.data()[k];
                let mk = b1 * m.data()[k] + ob1 * g;
                let vk = b2 * v.data()[k] + ob2 * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                value.data_mut()[k] -= step_size * mk / ((vk * inv_bc2).sqrt() + eps);
            }
        }
        true
    }
}

/// Learning rate falling linearly from `initial` at update 0 to 0 at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearDecay {
    pub initial: f64,
    pub total: u64,
}

impl LinearDecay {
    pub fn at(&self, update: u64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.initial * (1.0 - update.min(self.total) as f64 / self.total as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: [usize; 2],
    frozen: bool,
    data: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    step: u64,
    metadata: serde_json::Value,
    params: Vec<ParamRecord>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn to_json(&self) -> Result<String> {
        let flat = |t: &Tensor<T>| t.data().iter().map(|v| v.f64()).collect::<Vec<f64>>();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            step: self.step,
            metadata: self.metadata.clone(),
            params: self
                .entries
                .iter()
                .map(|e| ParamRecord {
                    name: e.name.clone(),
                    shape: [e.value.rows(), e.value.cols()],
                    frozen: e.frozen,
                    data: flat(&e.value),
                    m: flat(&e.m),
                    v: flat(&e.v),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown checkpoint format {:?}", file.format)));
        }
        let mut store = ParamStore::new();
        for p in file.params {
            let [r, c] = p.shape;
            let t = |d: Vec<f64>| -> Result<Tensor<T>> {
                Tensor::from_vec(r, c, d.into_iter().map(T::of).collect())
                    .map_err(|_| Error::Checkpoint(format!("array length does not match shape for {}", p.name)))
            };
            let (value, m, v) = (t(p.data)?, t(p.m)?, t(p.v)?);
            let id = store.add(&p.name, value)?;
            let e = &mut store.entries[id.0];
            e.m = m;
            e.v = v;
            e.frozen = p.frozen;
        }
        store.step = file.step;
        store.metadata = file.metadata;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// True when names, shapes, values, moments and step agree bit for bit.
    pub fn bit_equal(&self, other: &ParamStore<T>) -> bool {
        let bits = |t: &Tensor<T>| t.data().iter().map(|v| v.f64().to_bits()).collect::<Vec<u64>>();
        self.step == other.step
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.frozen == b.frozen
                    && bits(&a.value) == bits(&b.value)
                    && bits(&a.m) == bits(&b.m)
                    && bits(&a.v) == bits(&b.v)
            })
    }
}
