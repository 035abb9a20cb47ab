//! Observation encoder, social and ego policy networks, and the trajectory
//! autoencoder.

pub mod features;
pub mod layers;
pub mod policy;
pub mod traj;

pub use features::{EncodedObs, SetBatch};
pub use layers::Bind;
pub use policy::{
    guiding_head_name, Evaluation, Forward, HeadSpec, NetKind, PolicyNet, PolicyOutput, SetEncoder, EGO_HEAD,
    META_HEAD,
};
pub use traj::{history_features, TrajAutoencoder};
