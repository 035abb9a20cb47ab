use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    EgoInitial,
    Guiding,
    Meta,
    EgoFinal,
}

pub mod anchors;
pub mod gae;
pub mod inference;
pub mod loss;
pub mod ppo;
pub mod rollout;
pub mod stages;

pub use anchors::PreferenceAnchors;
pub use gae::{compute_gae, normalize};
pub use loss::{categorical_kl, entropy, ppo_loss, reg_loss, PpoTargets, PpoTerms};
pub use rollout::{
    EgoDriver, EpisodeSummary, HeadRule, LifeSummary, Record, Recorder, Reference, ReferenceRule, RolloutBatch,
    Runner, RunnerSpec, SocialDriver, SocialSetup,
};
pub use ppo::{PpoLearner, UpdateStats};
pub use stages::{load_stage, run_stage, Guidance, StageJob, StageReport, TrainOptions};
