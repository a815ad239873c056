//! Small multilayer perceptrons with exact reverse-mode gradients, the
//! optimizers that train them, and the distribution helpers used by the
//! distillation losses.

pub mod dist;
pub mod io;
mod mlp;
pub mod optim;

pub use dist::{kl_gaussian, kl_softmax, softmax, DiagGaussian};
pub use mlp::{param_count, Activation, Mlp, MlpConfig, Trace};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind};
