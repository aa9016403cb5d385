//! The global ranker: embedding lookup, sequential user encoder and a two-layer
//! scoring MLP.

mod attention;
mod batch;
mod model;

pub use batch::Batch;
pub use model::{theta_layout, BaseRanker, EncoderKind, PredictorPatch, RankerConfig};
