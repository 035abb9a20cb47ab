use std::rc::Rc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::ad::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::nets::features::{ego_features, SetBatch, SOCIAL_FEATURES};
use crate::nets::layers::{Bind, Gru, Linear, Mlp};
use crate::nets::traj::TrajAutoencoder;
use crate::sim::{ActionIndex, N_ACTIONS};

pub const META_HEAD: &str = "meta";
pub const EGO_HEAD: &str = "ego";

pub fn guiding_head_name(anchor: f64) -> String {
    format!("guiding({anchor})")
}

/// Action distribution and value estimate for one observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyOutput {
    pub probs: [f64; N_ACTIONS],
    pub value: f64,
}

impl PolicyOutput {
    /// Most likely action; ties go to the lower index.
    pub fn greedy(&self) -> ActionIndex {
        let mut best = 0;
        for k in 1..N_ACTIONS {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        ActionIndex::new(best).expect("in range")
    }

    pub fn sample(&self, rng: &mut impl Rng) -> ActionIndex {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for k in 0..N_ACTIONS {
            acc += self.probs[k];
            if u < acc {
                return ActionIndex::new(k).expect("in range");
            }
        }
        // rounding left `u` above the cumulative sum: take the last action with mass
        let last = (0..N_ACTIONS).rev().find(|&k| self.probs[k] > 0.0).unwrap_or(0);
        ActionIndex::new(last).expect("in range")
    }

    pub fn log_prob(&self, a: ActionIndex) -> f64 {
        self.probs[a.index()].ln()
    }
}

/// Deep-set encoder followed by a recurrent cell: rows are embedded by a
/// shared two-layer MLP, mean-pooled, concatenated with the viewer's own
/// embedding and fed to the GRU.
#[derive(Clone, Debug)]
pub struct SetEncoder {
    pub embed: Linear,
    pub pool: Linear,
    pub gru: Gru,
}

/// Tape handles produced by [`SetEncoder::encode`].
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub pooled: Var,
    pub viewer: Var,
    pub hidden: Var,
}

impl SetEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, inputs: usize, cfg: &NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(SetEncoder {
            embed: Linear::new(store, "encoder.embed", inputs, cfg.embed_width, 1.0, rng)?,
            pool: Linear::new(store, "encoder.pool", cfg.embed_width, cfg.pooled_width, 1.0, rng)?,
            gru: Gru::new(store, "encoder.gru", 2 * cfg.pooled_width, cfg.recurrent_width, rng)?,
        })
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &SetBatch<T>, mode: Bind) -> Result<Encoded> {
        if batch.rows.cols() != self.embed.inputs {
            return Err(Error::Shape(format!("{} row features, encoder expects {}", batch.rows.cols(), self.embed.inputs)));
        }
        let rows = g.constant(batch.rows.clone());
        let e = self.embed.forward(g, store, rows, mode)?;
        let e = g.tanh(e);
        let e = self.pool.forward(g, store, e, mode)?;
        let e = g.tanh(e);
        let pooled = g.mean_pool(e, batch.offsets.clone())?;
        let viewer = g.gather_rows(e, batch.viewers.clone())?;
        let x = g.concat_cols(&[pooled, viewer])?;
        let h = g.constant(batch.hidden.clone());
        let hidden = self.gru.step(g, store, x, h, mode)?;
        Ok(Encoded { pooled, viewer, hidden })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    /// Anchor preference baked into a guiding head.
    pub anchor: Option<f64>,
    /// Whether the head reads the preference as an extra input.
    pub beta_input: bool,
}

#[derive(Clone, Debug)]
struct Head {
    spec: HeadSpec,
    policy: Mlp,
    value: Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    Meta,
    Guiding,
    Ego,
}

#[derive(Serialize, Deserialize)]
struct NetMetadata {
    kind: NetKind,
    network: NetworkConfig,
    heads: Vec<HeadSpec>,
}

/// Tape handles of a full forward pass, one row per observation.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub encoded: Encoded,
    pub logits: Var,
    pub log_probs: Var,
    pub values: Var,
}

/// Result of a gradient-free forward pass.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub outputs: Vec<PolicyOutput>,
    pub hidden: Tensor<T>,
}

/// Shared encoder plus a registry of policy/value heads. Meta networks carry
/// one preference-conditioned head, guiding networks one head per anchor,
/// and ego networks one head plus the trajectory autoencoder.
#[derive(Clone, Debug)]
pub struct PolicyNet<T> {
    pub store: ParamStore<T>,
    kind: NetKind,
    cfg: NetworkConfig,
    encoder: SetEncoder,
    heads: Vec<Head>,
    traj: Option<TrajAutoencoder>,
}

impl<T: Scalar> PolicyNet<T> {
    fn build(kind: NetKind, cfg: &NetworkConfig, specs: Vec<HeadSpec>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, &[crate::rng::tag("init")]));
        let mut store = ParamStore::new();
        let inputs = match kind {
            NetKind::Ego => ego_features(cfg.latent_dim),
            _ => SOCIAL_FEATURES,
        };
        let encoder = SetEncoder::new(&mut store, inputs, cfg, &mut rng)?;
        let mut heads = Vec::with_capacity(specs.len());
        for spec in specs {
            let input = cfg.recurrent_width + usize::from(spec.beta_input);
            let name = format!("head.{}", spec.name);
            let policy = Mlp::new(&mut store, &format!("{name}.pi"), (input, cfg.head_hidden, N_ACTIONS), 0.01, &mut rng)?;
            let value = Mlp::new(&mut store, &format!("{name}.v"), (input, cfg.head_hidden, 1), 1.0, &mut rng)?;
            heads.push(Head { spec, policy, value });
        }
        let traj = match kind {
            NetKind::Ego => Some(TrajAutoencoder::new(&mut store, "traj", cfg, &mut rng)?),
            _ => None,
        };
        let meta = NetMetadata { kind, network: cfg.clone(), heads: heads.iter().map(|h| h.spec.clone()).collect() };
        store.metadata = serde_json::to_value(meta)?;
        Ok(PolicyNet { store, kind, cfg: cfg.clone(), encoder, heads, traj })
    }

    /// Preference-conditioned social policy.
    pub fn meta(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        let spec = HeadSpec { name: META_HEAD.into(), anchor: None, beta_input: true };
        Self::build(NetKind::Meta, cfg, vec![spec], seed)
    }

    /// One head per anchor over a shared encoder.
    pub fn guiding(cfg: &NetworkConfig, anchors: &[f64], seed: u64) -> Result<Self> {
        let specs = anchors
            .iter()
            .map(|&a| HeadSpec { name: guiding_head_name(a), anchor: Some(a), beta_input: false })
            .collect();
        Self::build(NetKind::Guiding, cfg, specs, seed)
    }

    pub fn ego(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        let spec = HeadSpec { name: EGO_HEAD.into(), anchor: None, beta_input: false };
        Self::build(NetKind::Ego, cfg, vec![spec], seed)
    }

    /// Rebuilds the architecture recorded in a checkpoint's metadata and
    /// adopts the stored values.
    pub fn from_store(store: ParamStore<T>) -> Result<Self> {
        let meta: NetMetadata = serde_json::from_value(store.metadata.clone())
            .map_err(|e| Error::Checkpoint(format!("network metadata: {e}")))?;
        let mut net = Self::build(meta.kind, &meta.network, meta.heads, 0)?;
        if net.store.len() != store.len() {
            return Err(Error::Checkpoint(format!("{} parameters stored, architecture has {}", store.len(), net.store.len())));
        }
        for (a, b) in net.store.ids().zip(store.ids()) {
            if net.store.name(a) != store.name(b) || net.store.value(a).shape() != store.value(b).shape() {
                return Err(Error::Checkpoint(format!("parameter {} does not match the architecture", store.name(b))));
            }
        }
        net.store = store;
        Ok(net)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_store(ParamStore::load(path)?)
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &SetEncoder {
        &self.encoder
    }

    pub fn traj(&self) -> Option<&TrajAutoencoder> {
        self.traj.as_ref()
    }

    pub fn heads(&self) -> impl Iterator<Item = &HeadSpec> {
        self.heads.iter().map(|h| &h.spec)
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head_index(&self, name: &str) -> Result<usize> {
        self.heads.iter().position(|h| h.spec.name == name).ok_or_else(|| Error::UnknownHead(name.to_string()))
    }

    /// Index of the guiding head for an anchor (exact match).
    pub fn anchor_head(&self, anchor: f64) -> Result<usize> {
        self.heads
            .iter()
            .position(|h| h.spec.anchor == Some(anchor))
            .ok_or_else(|| Error::UnknownHead(guiding_head_name(anchor)))
    }

    /// Parameter-name prefix of a head, for freezing or counting.
    pub fn head_prefix(&self, head: usize) -> String {
        format!("head.{}.", self.heads[head].spec.name)
    }

    pub fn hidden_width(&self) -> usize {
        self.cfg.recurrent_width
    }

    fn run_head(&self, g: &mut Graph<T>, head: &Head, h: Var, betas: &[f64], mode: Bind) -> Result<(Var, Var)> {
        let x = if head.spec.beta_input {
            let b = g.constant(Tensor::from_f64(betas.len(), 1, betas)?);
            g.concat_cols(&[h, b])?
        } else {
            h
        };
        let logits = head.policy.forward(g, &self.store, x, mode)?;
        let values = head.value.forward(g, &self.store, x, mode)?;
        Ok((logits, values))
    }

    /// Forward pass where observation `i` is scored by head `heads[i]`.
    /// Rows are grouped per head, run through that head alone and restored
    /// to batch order, so a head only sees (and only receives gradient
    /// from) its own observations.
    pub fn forward(&self, g: &mut Graph<T>, batch: &SetBatch<T>, heads: &[usize], mode: Bind) -> Result<Forward> {
        if heads.len() != batch.len() {
            return Err(Error::Shape(format!("{} head indices for {} observations", heads.len(), batch.len())));
        }
        if let Some(&bad) = heads.iter().find(|&&h| h >= self.heads.len()) {
            return Err(Error::UnknownHead(format!("#{bad}")));
        }
        let encoded = self.encoder.encode(g, &self.store, batch, mode)?;
        let first = heads[0];
        let (logits, values) = if heads.iter().all(|&h| h == first) {
            self.run_head(g, &self.heads[first], encoded.hidden, &batch.betas, mode)?
        } else {
            let mut order = Vec::with_capacity(heads.len());
            let mut logit_parts = Vec::new();
            let mut value_parts = Vec::new();
            for (k, head) in self.heads.iter().enumerate() {
                let idx: Vec<usize> = (0..heads.len()).filter(|&i| heads[i] == k).collect();
                if idx.is_empty() {
                    continue;
                }
                let betas: Vec<f64> = idx.iter().map(|&i| batch.betas[i]).collect();
                let h = g.gather_rows(encoded.hidden, idx.clone().into())?;
                let (l, v) = self.run_head(g, head, h, &betas, mode)?;
                logit_parts.push(l);
                value_parts.push(v);
                order.extend(idx);
            }
            let mut inverse = vec![0; order.len()];
            for (pos, &i) in order.iter().enumerate() {
                inverse[i] = pos;
            }
            let inverse: Rc<[usize]> = inverse.into();
            let l = g.concat_rows(&logit_parts)?;
            let v = g.concat_rows(&value_parts)?;
            (g.gather_rows(l, inverse.clone())?, g.gather_rows(v, inverse)?)
        };
        let log_probs = g.log_softmax(logits);
        Ok(Forward { encoded, logits, log_probs, values })
    }

    /// Gradient-free evaluation returning distributions and next recurrent states.
    pub fn evaluate(&self, batch: &SetBatch<T>, heads: &[usize]) -> Result<Evaluation<T>> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, batch, heads, Bind::Frozen)?;
        let lp = g.value(f.log_probs);
        let v = g.value(f.values);
        let outputs = (0..batch.len())
            .map(|i| {
                let mut probs = [0.0; N_ACTIONS];
                for (k, p) in probs.iter_mut().enumerate() {
                    *p = lp.get(i, k).f64().exp();
                }
                let s: f64 = probs.iter().sum();
                for p in probs.iter_mut() {
                    *p /= s;
                }
                PolicyOutput { probs, value: v.get(i, 0).f64() }
            })
            .collect();
        Ok(Evaluation { outputs, hidden: g.value(f.encoded.hidden).clone() })
    }
}
