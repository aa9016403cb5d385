//! The adaptor Φ: a group summary `z` extracted from the candidate list, FiLM
//! conditioning of the history on `z`, and per-group patches of the predictor
//! parameters mixed from learned pools.

mod adaptor;
mod export;
mod modes;

pub use adaptor::{
    compose_patch, mlp2, modulate_inputs, AdaptedPass, AdaptedScores, Adaptor, DistributionSample,
    Noise,
};
pub use export::{qual_columns, qual_tsv};
pub use modes::{
    patched_sizes, phi_layout, AdaptorConfig, ExtractorMode, FilmMode, ParamMode, PATCHED,
};
