//! Checkpoint curation toolkit.
//!
//! Tracks per-epoch losses for a training run, scores every checkpoint with the
//! approximated bias-variance tradeoff (sampled unaugmented training loss plus
//! validation loss), decides when to stop training, and averages selected
//! checkpoints in parameter space. A small deterministic trainer and a Monte
//! Carlo bias-variance decomposition make the whole recipe runnable on a laptop.

pub mod averaging;
pub mod bv_oracle;
mod error;
pub mod layout;
pub mod ledger;
pub mod report;
pub mod rng;
pub mod stopping;
pub mod tensor_store;
pub mod trainer;

pub use error::{Error, Result};
