//! Off-policy actor-critic training for sparse-reward UI agents.

pub mod algos;
pub mod env;
pub mod eval;
mod error;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
