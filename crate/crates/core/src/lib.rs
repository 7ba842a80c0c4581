//! Fairness post-processing for probabilistic multi-class classifiers.
//!
//! Scores from a pre-trained classifier are projected, in f-divergence, onto
//! the set of classifiers meeting a group-fairness criterion. The projection
//! is a multiplicative tilt of the base scores whose only fitted parameter is
//! a nonnegative dual vector, computed by a sample-parallel ADMM solver.
//!
//! The pipeline is:
//!
//! 1. [`constraints`] turns base scores and group information into
//!    per-sample constraint matrices.
//! 2. [`solver::admm_fit`] finds the dual vector.
//! 3. [`projection`] applies the tilt to training or new samples.
//! 4. [`metrics`] scores the resulting decisions.
//!
//! [`baseline`] and [`data`] provide enough of a training pipeline to run
//! end-to-end on raw tabular data; [`cli`] wires it all into a command-line
//! tool.

pub mod baseline;
pub mod cli;
pub mod constraints;
pub mod data;
pub mod divergence;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod projection;
pub mod solver;
pub mod util;

pub use constraints::{ConstraintSet, FairnessMetric, GroupModel};
pub use divergence::DivergenceKind;
pub use error::{Error, Result};
pub use matrix::{Matrix, ScoreMatrix};
pub use projection::ProjectedModel;
pub use solver::{admm_fit, DualSolution, SolverConfig};
