//! Permutation alignment and linear mode connectivity for small MLPs.

pub mod analysis;
pub mod conv;
pub mod data;
pub mod error;
pub mod linalg;
pub mod matching;
pub mod nn;
pub mod permutation;
pub mod rng;

pub use error::{Error, Result};
