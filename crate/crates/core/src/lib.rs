//! Preference-conditioned social agents and an ego policy for an unsignalised
//! T-intersection: simulator, IDM traffic, a small reverse-mode autodiff
//! kernel, recurrent set-encoder networks, PPO training stages and
//! evaluation tools.

pub mod ad;
pub mod app;
pub mod config;
pub mod error;
pub mod eval;
pub mod idm;
pub mod manifest;
pub mod nets;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
