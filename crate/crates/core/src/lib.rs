// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod ranker;
pub mod training;

pub use error::{Error, Result};
