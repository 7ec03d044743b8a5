//! Boltzmann-machine collaborative filtering.
//!
//! Trains ordinal, categorical and Gaussian rating models over sparse
//! user–item data, serves rating predictions (exact MAP, mean-field and
//! expected-value read-outs) and ranked recommendation lists, and ships the
//! comparison baselines and metrics used to evaluate them.

pub mod archive;
pub mod baselines;
pub mod corpus;
pub mod eval;
pub mod inference;
pub mod joint_bm;
pub mod learning;
pub mod error;
pub mod features;
pub mod math;
pub mod neighbors;
pub mod user_bm;

pub use error::{Error, Result};
