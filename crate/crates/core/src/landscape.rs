//! Rank-surrogate traces along a one-dimensional feasible line.
//!
//! Given a feasible `X*` and a nullspace direction `V`, every point
//! `X* + eta V` satisfies the measurements, so plotting surrogate penalties
//! against `eta` shows which surrogate keeps its minimum at the low-rank
//! point. Three curves are traced: the nuclear norm, the smoothed log-det
//! `sum_i log(s_i^2 + gamma)` for each requested `gamma`, and the implicit
//! BARM penalty
//!
//! ```text
//! g(X) = min_{P in SPD} vec(X)^T (I (x) P)^-1 vec(X) + log|A (I (x) P) A^T + lambda I|,
//! ```
//!
//! evaluated numerically by running the covariance updates with the estimate
//! held fixed.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::baselines::{self, NucConfig};
use crate::la;
use crate::linops::{vec_of, AffineOperator, LinopError};
use crate::seed;
use crate::solver::SolveError;

#[derive(Debug, Error)]
pub enum LandscapeError {
    #[error("operator has a trivial nullspace (p >= nm)")]
    TrivialNullspace,
    #[error("direction is degenerate: {0}")]
    DegenerateDirection(String),
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// How the nullspace direction is picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionMode {
    /// Difference between the minimum-nuclear-norm feasible point and `X*`.
    NnDifference,
    /// Seeded Gaussian matrix projected onto the nullspace.
    Random { seed: u64 },
}

/// A direction `V` with `A(V) = 0`, nonzero by construction.
pub fn nullspace_direction(
    op: &AffineOperator,
    xstar: &DMatrix<f64>,
    mode: DirectionMode,
) -> Result<DMatrix<f64>, LandscapeError> {
    let (n, m) = (op.n(), op.m());
    if op.p() >= n * m {
        return Err(LandscapeError::TrivialNullspace);
    }
    let v = match mode {
        DirectionMode::Random { seed: s } => {
            let g = seed::gaussian_vector(&mut seed::rng(s), n * m);
            crate::linops::unvec(&op.project_onto_nullspace(&g)?, n, m)
        }
        DirectionMode::NnDifference => {
            let b = op.apply(&vec_of(xstar))?;
            let report = baselines::nuclear_norm_solve(op, &b, &NucConfig::default())?;
            report.xhat - xstar
        }
    };
    let scale = xstar.norm().max(1.0);
    if v.norm() <= 1e-8 * scale {
        return Err(LandscapeError::DegenerateDirection(format!(
            "norm {:.3e} relative to the base point",
            v.norm()
        )));
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug)]
pub struct PenaltyOptions {
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Relative eigenvalue floor applied to the covariance iterate.
    pub eig_floor: f64,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        Self {
            inner_tol: 1e-8,
            max_inner: 200,
            eig_floor: 1e-14,
        }
    }
}

/// Result of the inner minimization for one point.
#[derive(Clone, Debug)]
pub struct PenaltyValue {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each inner iteration; non-increasing.
    pub history: Vec<f64>,
}

/// Implicit BARM penalty at a fixed estimate, by alternating covariance
/// updates with the estimate held fixed. Non-convergence returns the best
/// value reached, flagged.
pub fn barm_implicit_penalty(
    op: &AffineOperator,
    x: &DMatrix<f64>,
    lambda: f64,
) -> Result<PenaltyValue, LandscapeError> {
    let mut psi = DMatrix::identity(op.n(), op.n());
    barm_implicit_penalty_warm(op, x, lambda, &PenaltyOptions::default(), &mut psi)
}

/// Warm-started variant: `psi` carries the covariance between calls.
pub fn barm_implicit_penalty_warm(
    op: &AffineOperator,
    x: &DMatrix<f64>,
    lambda: f64,
    opts: &PenaltyOptions,
    psi: &mut DMatrix<f64>,
) -> Result<PenaltyValue, LandscapeError> {
    let (n, m, p) = (op.n(), op.m(), op.p());
    assert_eq!(x.shape(), (n, m));
    let xx = x * x.transpose();
    let x_is_zero = x.norm() == 0.0;

    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_inner {
        iterations = iter;
        let mut sigma = op.gram_col(psi, None);
        for d in 0..p {
            sigma[(d, d)] += lambda;
        }
        let factor = la::factor_spd(&sigma, lambda).map_err(|e| {
            LandscapeError::Solve(SolveError::SingularSystem {
                jitter: e.last_jitter,
            })
        })?;
        let quad = if x_is_zero {
            0.0
        } else {
            let scale = psi.trace().max(f64::MIN_POSITIVE) / n as f64;
            let psi_factor = la::factor_spd(psi, 1e-14 * scale).map_err(|e| {
                LandscapeError::Solve(SolveError::SingularSystem {
                    jitter: e.last_jitter,
                })
            })?;
            (psi_factor.solve_matrix(&xx)).trace()
        };
        let value = quad + factor.logdet();
        history.push(value);
        let improved = best - value;
        best = best.min(value);
        if iter > 1 && improved.abs() <= opts.inner_tol * (1.0 + value.abs()) {
            converged = true;
            break;
        }
        let quad_sum = op
            .col_quad_sum(psi, None, lambda, Some(&factor))
            .map_err(LandscapeError::Linop)?;
        let grad = &*psi * m as f64 - quad_sum;
        *psi = la::clamp_psd(&((&xx + grad) / m as f64), opts.eig_floor);
    }

    Ok(PenaltyValue {
        value: best,
        converged,
        iterations,
        history,
    })
}

/// Provenance recorded alongside a trace.
#[derive(Clone, Debug, Default)]
pub struct TraceMetadata {
    pub seed: Option<u64>,
    pub v_mode: String,
    pub lambda: f64,
}

/// Sampled surrogate values along `X* + eta V`.
#[derive(Clone, Debug)]
pub struct PenaltyTrace {
    pub eta_grid: Vec<f64>,
    pub nuclear: Vec<f64>,
    /// One value row per requested gamma: `(gamma, values)`.
    pub logdet: Vec<(f64, Vec<f64>)>,
    pub barm: Vec<f64>,
    pub barm_converged: Vec<bool>,
    pub metadata: TraceMetadata,
}

/// Trace all surrogates over the grid. The BARM column is evaluated with a
/// covariance warm start sweeping outward from the grid point nearest zero,
/// so that neighboring points share their minimizers.
pub fn trace_penalties(
    op: &AffineOperator,
    xstar: &DMatrix<f64>,
    v: &DMatrix<f64>,
    eta_grid: &[f64],
    gammas: &[f64],
    lambda: f64,
    metadata: TraceMetadata,
) -> Result<PenaltyTrace, LandscapeError> {
    let len = eta_grid.len();
    let mut nuclear = vec![0.0; len];
    let mut logdet: Vec<(f64, Vec<f64>)> =
        gammas.iter().map(|&g| (g, vec![0.0; len])).collect();
    let mut barm = vec![0.0; len];
    let mut barm_converged = vec![false; len];

    for (i, &eta) in eta_grid.iter().enumerate() {
        let point = xstar + v * eta;
        let svals = point.svd(false, false).singular_values;
        nuclear[i] = svals.iter().sum();
        for (g, values) in logdet.iter_mut() {
            values[i] = svals.iter().map(|s| (s * s + *g).ln()).sum();
        }
    }

    // Outward warm-started sweep for the implicit penalty.
    let origin = (0..len)
        .min_by(|&a, &b| eta_grid[a].abs().total_cmp(&eta_grid[b].abs()))
        .unwrap_or(0);
    let opts = PenaltyOptions::default();
    let mut eval = |i: usize, psi: &mut DMatrix<f64>| -> Result<(), LandscapeError> {
        let point = xstar + v * eta_grid[i];
        let out = barm_implicit_penalty_warm(op, &point, lambda, &opts, psi)?;
        barm[i] = out.value;
        barm_converged[i] = out.converged;
        Ok(())
    };
    if len > 0 {
        let mut psi_up = DMatrix::identity(op.n(), op.n());
        eval(origin, &mut psi_up)?;
        let mut psi_down = psi_up.clone();
        for i in origin + 1..len {
            eval(i, &mut psi_up)?;
        }
        for i in (0..origin).rev() {
            eval(i, &mut psi_down)?;
        }
    }

    Ok(PenaltyTrace {
        eta_grid: eta_grid.to_vec(),
        nuclear,
        logdet,
        barm,
        barm_converged,
        metadata,
    })
}
