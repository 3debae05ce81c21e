//! Numerical laboratory for the correlated hidden manifold model (CHMM).
//!
//! The crate generates pairs of correlated synthetic classification tasks,
//! runs the four transfer protocols on them (transferred features, random
//! features, a two-layer network trained from scratch and a fine-tuned
//! transfer), and predicts the frozen-feature generalization error through
//! the Gaussian-equivalent replica saddle point.
//!
//! Module map:
//!
//! * [`generator`] samples source tasks, derives correlated targets, draws datasets.
//! * [`twolayer`] trains bias-free two-layer ReLU networks with Adam.
//! * [`convex`] fits ridge-regularized logistic readouts on frozen features.
//! * [`equivalence`] estimates the covariances of the Gaussian-equivalent model.
//! * [`replica`] solves the zero-temperature saddle point and returns the error.
//! * [`experiments`] sweeps parameter grids and exports results.
//! * [`realdata`] reads IDX image files and applies binary labeling rules.

// Validation writes `!(x > 0.0)` on purpose: the negation also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod convex;
pub mod equivalence;
mod error;
pub mod experiments;
pub mod generator;
mod linalg;
pub mod quadrature;
pub mod realdata;
pub mod replica;
pub mod rng;
pub mod twolayer;

pub use error::{Error, Result};
