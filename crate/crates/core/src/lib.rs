//! Policy evaluation for joint MDPs: exact and incremental dynamic programming
//! for joint return moments across counterfactual actions, projected linear
//! approximation with a PSD second-moment parameter, and gap statistics backed
//! by a coupled-rollout Monte Carlo oracle.

pub mod config;
pub mod dp;
pub mod env;
pub mod error;
pub mod fa;
pub mod incremental;
pub mod jsonio;
pub mod moments;
pub mod real;
pub mod rng;
pub mod runner;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
