//! Class-based supervised dictionary learning for audio classification.

pub mod chordgen;
pub mod classifier;
pub mod dictionary;
pub mod error;
pub mod features;
pub mod harness;
pub mod ksvd;
pub mod learn;
pub mod rng;
pub mod sparse_coding;

pub use error::{Error, Result};
