//! JSON configuration: scenario geometry, rule-based driver presets, network
//! widths, PPO hyperparameters, per-stage budgets, and evaluation sizes.
//!
//! Every section has defaults, so `{}` is a valid config file. Command-line
//! flags override fields after loading; the effective config is what gets
//! hashed into a run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::idm::IdmParams;

pub const IDM_CONSERVATIVE: &str = "idm-conservative";
pub const IDM_AGGRESSIVE: &str = "idm-aggressive";

/// Scenario geometry, dynamics, and reward constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_social_per_lane: usize,
    /// Nose-to-tail spawn gap bounds, meters.
    pub spawn_gap_range: [f64; 2],
    pub road_half_length: f64,
    pub lane_width: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    /// Radius of the ego's left turn into the upper lane.
    pub turn_radius: f64,
    /// y coordinate of the ego spawn point on the vertical approach.
    pub ego_start_y: f64,
    pub dt: f64,
    pub timeout_steps: usize,
    pub r_goal: f64,
    pub r_fail: f64,
    pub r_speed: f64,
    pub max_accel: f64,
    pub initial_social_speed: f64,
    /// Lateral distance from the assigned track beyond which a vehicle is off-road.
    pub offroad_tolerance: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_social_per_lane: 3,
            spawn_gap_range: [6.0, 12.0],
            road_half_length: 30.0,
            lane_width: 4.0,
            vehicle_length: 4.0,
            vehicle_width: 2.0,
            turn_radius: 6.0,
            ego_start_y: -12.0,
            dt: 0.1,
            timeout_steps: 400,
            r_goal: 2.0,
            r_fail: -2.0,
            r_speed: 0.01,
            max_accel: 4.0,
            initial_social_speed: 3.0,
            offroad_tolerance: 0.5,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dt != 0.1 {
            return bad(format!("dt must be exactly 0.1 s, got {}", self.dt));
        }
        let positive = [
            ("road_half_length", self.road_half_length),
            ("lane_width", self.lane_width),
            ("vehicle_length", self.vehicle_length),
            ("vehicle_width", self.vehicle_width),
            ("turn_radius", self.turn_radius),
            ("max_accel", self.max_accel),
            ("offroad_tolerance", self.offroad_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let [lo, hi] = self.spawn_gap_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("spawn_gap_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
        }
        if self.timeout_steps == 0 {
            return bad("timeout_steps must be positive".into());
        }
        if self.ego_start_y >= -self.lane_width - self.vehicle_length / 2.0 {
            return bad("ego must spawn below the lower lane".into());
        }
        if self.turn_radius >= self.road_half_length {
            return bad("turn radius must be shorter than the road half length".into());
        }
        let upper_center = self.lane_width / 2.0;
        if upper_center - self.turn_radius <= self.ego_start_y {
            return bad("turn starts before the ego spawn point".into());
        }
        if !(0.0..=crate::sim::MAX_SPEED).contains(&self.initial_social_speed) {
            return bad("initial_social_speed outside the action speed range".into());
        }
        Ok(())
    }
}

/// Named rule-based driver presets plus the conservative mixing fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmConfig {
    pub presets: BTreeMap<String, IdmParams>,
    pub conservative_fraction: f64,
}

impl Default for IdmConfig {
    fn default() -> Self {
        let mut presets = BTreeMap::new();
        presets.insert(IDM_CONSERVATIVE.to_string(), IdmParams::conservative());
        presets.insert(IDM_AGGRESSIVE.to_string(), IdmParams::aggressive());
        IdmConfig { presets, conservative_fraction: 0.5 }
    }
}

impl IdmConfig {
    pub fn preset(&self, name: &str) -> Result<&IdmParams> {
        self.presets
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown IDM preset `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        for name in [IDM_CONSERVATIVE, IDM_AGGRESSIVE] {
            self.preset(name)?.validate()?;
        }
        if !(0.0..=1.0).contains(&self.conservative_fraction) {
            return Err(Error::InvalidConfig("conservative_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub embed_width: usize,
    pub pooled_width: usize,
    pub recurrent_width: usize,
    pub head_hidden: usize,
    pub latent_dim: usize,
    pub history_len: usize,
    pub traj_hidden: usize,
    pub traj_decoder_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            embed_width: 32,
            pooled_width: 32,
            recurrent_width: 64,
            head_hidden: 64,
            latent_dim: 4,
            history_len: 10,
            traj_hidden: 16,
            traj_decoder_hidden: 32,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.embed_width,
            self.pooled_width,
            self.recurrent_width,
            self.head_hidden,
            self.latent_dim,
            self.history_len,
            self.traj_hidden,
            self.traj_decoder_hidden,
        ];
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("network widths must be positive".into()));
        }
        Ok(())
    }
}

/// Preference anchors for the guiding policies and the meta-policy range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreferenceConfig {
    pub anchors: Vec<f64>,
    pub guide_distance: f64,
    pub reg_weight: f64,
    pub meta_range: [f64; 2],
    pub ood_range: [f64; 2],
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        PreferenceConfig {
            anchors: vec![-1.0, 0.0, 1.0, 2.0, 3.0],
            guide_distance: 0.1,
            reg_weight: 0.01,
            meta_range: [-1.0, 3.0],
            ood_range: [-3.0, 3.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    /// Parallel environments stepped in lockstep during collection.
    pub n_envs: usize,
    /// Learning-agent records gathered per training iteration (rounded up to
    /// whole environment steps).
    pub records_per_iteration: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 4,
            minibatch: 256,
            lr: 1e-4,
            max_grad_norm: 0.5,
            n_envs: 8,
            records_per_iteration: 4096,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) || self.epochs == 0 || self.minibatch == 0 {
            return bad("clip, epochs and minibatch must be positive");
        }
        if !(self.lr >= 0.0) || self.n_envs == 0 || self.records_per_iteration == 0 {
            return bad("lr must be non-negative; n_envs and records_per_iteration positive");
        }
        Ok(())
    }
}

/// Optional per-stage PPO overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoOverride {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub minibatch: Option<usize>,
    pub entropy_coef: Option<f64>,
    pub n_envs: Option<usize>,
    pub records_per_iteration: Option<usize>,
}

impl PpoOverride {
    pub fn apply(&self, base: &PpoConfig) -> PpoConfig {
        let mut out = base.clone();
        if let Some(v) = self.lr {
            out.lr = v;
        }
        if let Some(v) = self.epochs {
            out.epochs = v;
        }
        if let Some(v) = self.minibatch {
            out.minibatch = v;
        }
        if let Some(v) = self.entropy_coef {
            out.entropy_coef = v;
        }
        if let Some(v) = self.n_envs {
            out.n_envs = v;
        }
        if let Some(v) = self.records_per_iteration {
            out.records_per_iteration = v;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSettings {
    /// Learning-agent records for the stage. For the guiding stage this is
    /// the budget of each anchor.
    pub budget: u64,
    #[serde(default)]
    pub ppo: PpoOverride,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Trajectory windows collected for autoencoder pre-training.
    pub windows: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { windows: 20_000, epochs: 10, minibatch: 128, lr: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    pub ego_initial: StageSettings,
    pub guiding: StageSettings,
    pub meta: StageSettings,
    pub ego_final: StageSettings,
    pub inference: InferenceConfig,
    /// Probability that an ego-final episode uses rule-based social traffic.
    pub idm_episode_prob: f64,
    /// Abort after this many consecutive non-finite batches.
    pub max_consecutive_drops: usize,
}

impl Default for StagesConfig {
    fn default() -> Self {
        let s = |budget| StageSettings { budget, ppo: PpoOverride::default() };
        StagesConfig {
            ego_initial: s(500_000),
            guiding: s(200_000),
            meta: s(500_000),
            ego_final: s(500_000),
            inference: InferenceConfig::default(),
            idm_episode_prob: 0.5,
            max_consecutive_drops: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub kl_samples: usize,
    pub kl_min_samples: usize,
    pub sweep_steps: usize,
    pub beta_grid_step: f64,
    pub cross_episodes: usize,
    pub cross_seeds: Vec<u64>,
    pub sweep_batches: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            kl_samples: 10_000,
            kl_min_samples: 1_000,
            sweep_steps: 100_000,
            beta_grid_step: 0.5,
            cross_episodes: 200,
            cross_seeds: vec![0, 1, 2, 3, 4],
            sweep_batches: 20,
        }
    }
}

/// The full configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub idm: IdmConfig,
    pub network: NetworkConfig,
    pub preferences: PreferenceConfig,
    pub ppo: PpoConfig,
    pub stages: StagesConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Config::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.idm.validate()?;
        self.network.validate()?;
        self.ppo.validate()?;
        for stage in [
            &self.stages.ego_initial,
            &self.stages.guiding,
            &self.stages.meta,
            &self.stages.ego_final,
        ] {
            stage.ppo.apply(&self.ppo).validate()?;
        }
        let p = &self.preferences;
        if p.anchors.is_empty() {
            return Err(Error::InvalidConfig("at least one preference anchor is required".into()));
        }
        if p.anchors.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("anchors must be sorted and distinct".into()));
        }
        if !(p.guide_distance > 0.0) {
            return Err(Error::InvalidConfig("guide_distance must be positive".into()));
        }
        if !(p.reg_weight >= 0.0) {
            return Err(Error::InvalidConfig("reg_weight must be non-negative".into()));
        }
        for r in [p.meta_range, p.ood_range] {
            if !(r[0] < r[1]) {
                return Err(Error::InvalidConfig("preference ranges must have lo < hi".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.stages.idm_episode_prob) {
            return Err(Error::InvalidConfig("idm_episode_prob outside [0, 1]".into()));
        }
        if self.eval.beta_grid_step <= 0.0 || self.eval.sweep_batches < 2 {
            return Err(Error::InvalidConfig("eval grid step and batch count must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn stage_ppo(&self, stage: crate::train::Stage) -> PpoConfig {
        use crate::train::Stage;
        let s = match stage {
            Stage::EgoInitial => &self.stages.ego_initial,
            Stage::Guiding => &self.stages.guiding,
            Stage::Meta => &self.stages.meta,
            Stage::EgoFinal => &self.stages.ego_final,
        };
        s.ppo.apply(&self.ppo)
    }
}
