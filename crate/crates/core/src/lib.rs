//! Personalized apprenticeship learning from heterogeneous demonstrators.
//!
//! Learners observe `(state, action, demonstrator)` triples and fit one shared
//! model plus a learned embedding per demonstrator. Two model families are
//! provided: a feed-forward network ([`pnn`]) and a soft decision tree that
//! can be converted into a crisp, readable tree ([`pddt`]).

pub mod dataset;
pub mod diffcore;
pub mod envs;
pub mod harness;
pub mod actionrep;
pub mod baselines;
pub mod pairwise;
pub mod pddt;
pub mod pnn;
pub mod error;
pub mod rng;

pub use error::{Error, Result};
