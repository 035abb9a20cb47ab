//! Minimal reverse-mode automatic differentiation and optimisation.

mod graph;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, LinearDecay, ParamId, ParamStore, CHECKPOINT_FORMAT};
pub use tensor::{Scalar, Tensor};
