//! Context-aware adaptation of prior reinforcement-learning knowledge.
//!
//! Source tasks contribute trained knowledge (policies, Q-functions or
//! actor-critic pairs) plus a learned next-state model. A handful of probe
//! transitions from a new target task are scored against each model; the
//! resulting similarity weights decide how much each source's knowledge
//! shapes the target learner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod baselines;
pub mod context;
pub mod envs;
pub mod error;
pub mod harness;
pub mod knowledge;
pub mod mdp;
pub mod nn;
pub mod par;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
