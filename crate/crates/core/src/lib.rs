//! ADMM-DAD: an unrolled ADMM decoder for analysis-sparse compressed sensing.
//!
//! The crate covers the whole pipeline: a classical ADMM reference solver for
//! the generalized LASSO, the unrolled network with a learnable redundant
//! analysis operator, exact gradients and Adam training, calculators for the
//! network's generalization-bound constants, data ingestion and an experiment
//! grid runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm_ref;
pub mod bounds;
pub mod container;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod training;
pub mod unfolded;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG used everywhere a seed is accepted; stable across platforms and releases.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
