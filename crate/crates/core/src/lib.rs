//! Peptide generation, reward design, PPO fine-tuning, screening and
//! evaluation on top of a small autodiff engine.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod assay;
pub mod dataprep;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod mic;
pub mod physchem;
pub mod policy;
pub mod ppo;
pub mod records;
pub mod reward;
pub mod rng;
pub mod screening;
pub mod seq;

pub use error::{Error, Result};
