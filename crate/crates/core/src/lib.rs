//! Algorithmic core for multi-task hierarchical adversarial inverse
//! reinforcement learning.
//!
//! Everything here is `no_std` + `alloc`: a small reverse-mode
//! differentiation engine, the tabular/grid task families, the one-step
//! option policy, the variational posteriors, the hierarchical AIRL
//! discriminator, the hierarchical PPO optimizer, the EM training loop and
//! the exact enumeration oracle used to validate every estimator.
//!
//! File formats, configuration parsing and the command-line entry point
//! live in the `mhairl` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod discrim;
pub mod emtrain;
pub mod env;
pub mod error;
pub mod expert;
pub mod gradcheck;
pub mod graph;
pub mod hppo;
pub mod math;
pub mod nn;
pub mod objective;
pub mod oracle;
pub mod params;
pub mod policy;
pub mod posterior;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Grads, Var};
pub use params::{Adam, ParamId, ParamSet};
pub use tensor::Tensor;
