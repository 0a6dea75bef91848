//! Laboratory for advantage-decoupled preference optimization on exactly
//! differentiable toy policies.
//!
//! A policy answers a synthetic query and then emits a self-verification
//! score token. Training combines an answer reward, a verification reward
//! (thresholded binary or pairwise preference) and group-normalized
//! advantages that are either aggregated into one signal or kept apart and
//! routed to answer and score tokens through disjoint masks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tasks`] generates queries with known ground truth and decodes tokens.
//! * [`rewards`] scores answers and verification scores.
//! * [`advantage`] normalizes rewards per group and builds token masks.
//! * [`policy`] holds the tabular softmax policy, sampling and densities.
//! * [`objective`] evaluates the clipped surrogate and its exact gradient.
//! * [`trainer`] runs the outer reinforcement-learning loop.
//! * [`evaluation`] implements pass@1, majority voting, best-of-N, AUC and AP.
//! * [`experiments`] scripts the ablations and writes plot-ready outputs.
//! * [`config`] and [`cli`] wire configuration files to the runners.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advantage;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod objective;
pub mod policy;
pub mod rewards;
pub mod tasks;
pub mod trainer;

pub(crate) mod seeding;

pub use error::{Error, Result};
