//! Joint optimization of network weights and discrete network structure.
//!
//! Structure variables are binary vectors drawn from a factorized Bernoulli
//! distribution ([`dist`]). Each training step samples λ structures, trains
//! the shared weights by SGD on the averaged gradient, and moves the
//! distribution parameters along a rank-based natural gradient ([`trainer`]).
//!
//! The gated architectures live in [`models`], the numerical engine in
//! [`nn`], and the experiment runner (config, metrics, checkpoints) in
//! [`harness`].

pub mod data;
pub mod dist;
mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod predictor;
pub mod trainer;

pub use error::{Error, Result};
