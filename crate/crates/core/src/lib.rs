//! Shuffling SGD with batch normalization.
//!
//! Builds the SS, RR and GD batch-normalized datasets, trains linear+BN
//! models on them, computes the distorted optima, and analyzes
//! separability of the normalized data for classification.

pub mod dataset;
pub mod deep;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optima;
pub mod risks;
pub mod rng;
pub mod separability;
pub mod toygen;
pub mod trainers;

pub use error::{Error, Result};
