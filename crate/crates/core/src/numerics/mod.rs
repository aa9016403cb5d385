//! Dense tensors, reverse-mode differentiation, seeded randomness and Adam.

mod adam;
mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod rng;
mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{init, Bound, ParamId, ParamSet};
pub use rng::{Purpose, Rng};
pub use tensor::{Real, Tensor};
