//! Behavior distillation for tabular MDPs.
//!
//! The crate turns a sub-optimal offline dataset into a tiny synthetic
//! training set whose behavioral-cloning fit is a good policy. It provides
//! exact MDP machinery (policy evaluation, occupancy measures), offline
//! dataset generation at graded quality tiers, pessimistic policy/value
//! extraction from logged data, a reverse-mode tape that supports
//! differentiating through its own backward pass, the bilevel distillation
//! loop with three outer objectives, exact checks of the performance-gap
//! bounds that motivate the objectives, and an evaluation harness.
//!
//! The crate is `no_std` (with `alloc`); all IO lives in the companion CLI
//! crate. Every stochastic routine takes an explicit seed and is bitwise
//! reproducible.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod extractor;
mod linalg;
pub mod mdp;
pub mod policy;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
