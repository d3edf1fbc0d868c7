//! Low-rank matrix recovery under affine measurement constraints.
//!
//! The centerpiece is BARM (Bayesian affine rank minimization), an
//! empirical-Bayes solver that learns a structured Gaussian covariance whose
//! posterior mean is a low-rank estimate of the unknown matrix. Around it the
//! crate provides:
//!
//! - [`linops`]: affine measurement operators (dense, entry sampling,
//!   subsampled 2-D DCT, block diagonal) with apply/adjoint and the block
//!   decompositions the solver needs,
//! - [`solver`]: the BARM updates in column and symmetric form,
//! - [`baselines`]: nuclear-norm minimization (ADMM with singular value
//!   thresholding) and IRLS0 with a decreasing smoothing schedule,
//! - [`landscape`]: rank-surrogate traces along one-dimensional feasible
//!   lines, including the implicit BARM penalty,
//! - [`bench`]: ground-truth generation, recovery metrics and a seeded,
//!   resumable sweep runner,
//! - [`io`]: the matrix, operator-descriptor, JSONL and CSV file formats.

pub mod baselines;
pub mod bench;
pub mod io;
mod la;
pub mod landscape;
pub mod linops;
pub mod seed;
pub mod solver;

pub use linops::{AffineOperator, EnsembleKind, EnsembleSpec, OperatorKind};
pub use solver::{BarmConfig, BarmState, RecoveryReport, SolveMode};
