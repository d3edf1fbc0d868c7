//! The BARM solver.
//!
//! BARM treats the unknown matrix as Gaussian with a learned structured
//! covariance and minimizes the marginal-likelihood cost
//!
//! ```text
//! L(P) = b^T S^-1 b + log|S|,   S = A Pbar A^T + lambda I,
//! ```
//!
//! by an EM-style majorize-minimize loop: posterior mean of `X` (E-step),
//! a concavity bound on `log|S|` whose equality point is a sum of Schur
//! complements (the gradient bound), then a closed-form covariance update.
//! Low-rank structure is not imposed anywhere; it emerges because collapsing
//! covariance eigenvalues drives `log|S|` down while the data fit keeps `b`
//! inside the span.
//!
//! Two parameterizations are provided. The column form learns a single
//! `n x n` covariance shared by all columns, with a fixed per-column scale
//! vector `nu` (all ones). The symmetric form averages row and column
//! covariances, `Pbar = (Psi_r (x) I + I (x) Psi_c) / 2`, which removes the
//! dependence on whether the problem is posed for `X` or `X^T`; it is the
//! default.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::la;
use crate::linops::{unvec, vec_of, AffineOperator, LinopError, OperatorKind};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(
        "measurement covariance stayed indefinite after jitter {jitter:.3e}; \
         lambda and both covariances are likely collapsing together"
    )]
    SingularSystem { jitter: f64 },
    #[error("non-finite value encountered at iteration {iter}")]
    NumericalBreakdown { iter: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Which covariance parameterization the solver iterates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    Column,
    Symmetric,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarmConfig {
    /// Noise variance. Effectively zero (1e-10) for noiseless problems.
    pub lambda: f64,
    pub mode: SolveMode,
    pub max_iterations: usize,
    /// Relative change of the posterior mean below which iteration stops.
    pub convergence_tol: f64,
    /// Coefficient of the tr(Psi^-1) convergence regularizer. Off by default.
    pub gamma_reg: f64,
    /// Smallest retained covariance eigenvalue, relative to the largest.
    pub eig_floor: f64,
}

impl Default for BarmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-10,
            mode: SolveMode::Symmetric,
            max_iterations: 500,
            convergence_tol: 1e-8,
            gamma_reg: 0.0,
            eig_floor: 1e-14,
        }
    }
}

impl BarmConfig {
    pub fn column() -> Self {
        Self {
            mode: SolveMode::Column,
            ..Self::default()
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    fn validate(&self) -> Result<(), SolveError> {
        if !(self.lambda > 0.0) {
            return Err(SolveError::InvalidConfig("lambda must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(SolveError::InvalidConfig(
                "convergence_tol must be positive".into(),
            ));
        }
        if self.gamma_reg < 0.0 || self.eig_floor < 0.0 {
            return Err(SolveError::InvalidConfig(
                "gamma_reg and eig_floor must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Solver iterate: covariances, scale vector, posterior mean and cost.
#[derive(Clone, Debug)]
pub struct BarmState {
    /// `n x n` column covariance (the single covariance in column mode).
    pub psi_c: DMatrix<f64>,
    /// `m x m` row covariance; present only in symmetric mode.
    pub psi_r: Option<DMatrix<f64>>,
    /// Per-column scales. Fixed at one; carried so that cost identities
    /// under block rescalings of `A` can be exercised directly.
    pub nu: DVector<f64>,
    /// Current posterior mean, column-stacked.
    pub xhat: DVector<f64>,
    pub cost: f64,
    pub iter: usize,
}

impl BarmState {
    /// Agnostic initialization: identity covariances, unit scales.
    pub fn init(op: &AffineOperator, mode: SolveMode) -> Self {
        Self {
            psi_c: DMatrix::identity(op.n(), op.n()),
            psi_r: match mode {
                SolveMode::Symmetric => Some(DMatrix::identity(op.m(), op.m())),
                SolveMode::Column => None,
            },
            nu: DVector::repeat(op.m(), 1.0),
            xhat: DVector::zeros(op.n() * op.m()),
            cost: f64::INFINITY,
            iter: 0,
        }
    }

    pub fn mode(&self) -> SolveMode {
        if self.psi_r.is_some() {
            SolveMode::Symmetric
        } else {
            SolveMode::Column
        }
    }
}

/// Final estimate plus diagnostics.
#[derive(Clone, Debug)]
pub struct RecoveryReport {
    /// The `n x m` estimate.
    pub xhat: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||A(Xhat) - b|| / ||b||` (absolute when `b = 0`).
    pub residual: f64,
    /// Full spectrum of the estimate, non-increasing.
    pub singular_values: Vec<f64>,
    /// Largest tail gap exceeding the 1e3 spectral ratio.
    pub est_rank: usize,
    pub final_cost: f64,
}

impl RecoveryReport {
    pub(crate) fn from_estimate(
        op: &AffineOperator,
        b: &DVector<f64>,
        xhat: DMatrix<f64>,
        iterations: usize,
        converged: bool,
        final_cost: f64,
    ) -> Result<Self, LinopError> {
        let resid = (op.apply(&vec_of(&xhat))? - b).norm();
        let scale = b.norm();
        let residual = if scale > 0.0 { resid / scale } else { resid };
        let singular_values: Vec<f64> =
            xhat.clone().svd(false, false).singular_values.iter().copied().collect();
        let est_rank = rank_estimate(&singular_values, 1e3);
        Ok(Self {
            xhat,
            iterations,
            converged,
            residual,
            singular_values,
            est_rank,
            final_cost,
        })
    }
}

/// Per-iteration history captured by [`solve_traced`].
#[derive(Clone, Debug, Default)]
pub struct SolveTrace {
    pub costs: Vec<f64>,
    pub xhats: Vec<DVector<f64>>,
}

fn check_b(op: &AffineOperator, b: &DVector<f64>) -> Result<(), SolveError> {
    if b.len() != op.p() {
        return Err(SolveError::ShapeMismatch(format!(
            "observation vector has length {}, operator produces {}",
            b.len(),
            op.p()
        )));
    }
    Ok(())
}

/// Measurement covariance `A Pbar A^T + lambda I` for the state's prior.
fn combined_sigma(op: &AffineOperator, state: &BarmState, lambda: f64) -> DMatrix<f64> {
    let mut sigma = match &state.psi_r {
        Some(psi_r) => {
            let mut s = op.gram_col(&state.psi_c, None);
            s += op.gram_row(psi_r);
            s *= 0.5;
            s
        }
        None => op.gram_col(&state.psi_c, Some(&state.nu)),
    };
    for d in 0..op.p() {
        sigma[(d, d)] += lambda;
    }
    sigma
}

/// `Pbar A^T w` without forming any `nm x nm` matrix.
fn prior_cov_adjoint(
    op: &AffineOperator,
    state: &BarmState,
    w: &DVector<f64>,
) -> Result<DMatrix<f64>, SolveError> {
    let xa = unvec(&op.adjoint(w)?, op.n(), op.m());
    Ok(match &state.psi_r {
        Some(psi_r) => 0.5 * (&state.psi_c * &xa + &xa * psi_r),
        None => {
            let mut xm = &state.psi_c * &xa;
            for i in 0..op.m() {
                xm.column_mut(i).scale_mut(state.nu[i]);
            }
            xm
        }
    })
}

fn factor_sigma(sigma: &DMatrix<f64>, lambda: f64) -> Result<la::SpdFactor, SolveError> {
    la::factor_spd(sigma, lambda).map_err(|e| SolveError::SingularSystem {
        jitter: e.last_jitter,
    })
}

/// Posterior mean `Pbar A^T (lambda I + A Pbar A^T)^-1 b`, solving one
/// `p x p` positive-definite system.
pub fn posterior_mean(
    op: &AffineOperator,
    state: &BarmState,
    lambda: f64,
    b: &DVector<f64>,
) -> Result<DVector<f64>, SolveError> {
    check_b(op, b)?;
    let sigma = combined_sigma(op, state, lambda);
    let factor = factor_sigma(&sigma, lambda)?;
    let w = factor.solve_vector(b);
    Ok(vec_of(&prior_cov_adjoint(op, state, &w)?))
}

/// Marginal-likelihood cost `b^T S^-1 b + log|S|` at the state's covariances.
pub fn evaluate_cost(
    op: &AffineOperator,
    state: &BarmState,
    lambda: f64,
    b: &DVector<f64>,
) -> Result<f64, SolveError> {
    check_b(op, b)?;
    let sigma = combined_sigma(op, state, lambda);
    let factor = factor_sigma(&sigma, lambda)?;
    let cost = b.dot(&factor.solve_vector(b)) + factor.logdet();
    if cost.is_finite() {
        Ok(cost)
    } else {
        Err(SolveError::NumericalBreakdown { iter: state.iter })
    }
}

/// Equality point of the log-det bound for the column prior `I (x) P`:
/// `sum_i [P - P A_i^T (A (I (x) P) A^T + lambda I)^-1 A_i P]`.
///
/// Each summand is a Schur complement, so the result is symmetric PSD.
pub fn gradient_bound(
    op: &AffineOperator,
    psi: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>, SolveError> {
    gradient_bound_scaled(op, psi, None, lambda)
}

/// Column-prior gradient bound with per-column scales `nu`.
pub fn gradient_bound_scaled(
    op: &AffineOperator,
    psi: &DMatrix<f64>,
    nu: Option<&DVector<f64>>,
    lambda: f64,
) -> Result<DMatrix<f64>, SolveError> {
    let quad = op.col_quad_sum(psi, nu, lambda, None)?;
    Ok(psi * op.m() as f64 - quad)
}

/// Row analogue for the prior `Q (x) I`:
/// `sum_j [Q - Q B_j^T (A (Q (x) I) A^T + lambda I)^-1 B_j Q]`.
pub fn gradient_bound_row(
    op: &AffineOperator,
    psi_r: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>, SolveError> {
    let quad = op.row_quad_sum(psi_r, lambda, None)?;
    Ok(psi_r * op.n() as f64 - quad)
}

/// Closed-form column covariance update `(Xhat Xhat^T + grad) / m`.
pub fn psi_update_col(
    xhat: &DMatrix<f64>,
    grad: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SolveError> {
    if grad.nrows() != xhat.nrows() || grad.ncols() != xhat.nrows() {
        return Err(SolveError::ShapeMismatch(format!(
            "gradient is {}x{}, expected {0}x{0} to match Xhat Xhat^T",
            grad.nrows(),
            grad.ncols(),
        )));
    }
    let mut out = (xhat * xhat.transpose() + grad) / xhat.ncols() as f64;
    la::symmetrize(&mut out);
    Ok(out)
}

/// Closed-form row covariance update `(Xhat^T Xhat + grad) / n`.
pub fn psi_update_row(
    xhat: &DMatrix<f64>,
    grad: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SolveError> {
    if grad.nrows() != xhat.ncols() || grad.ncols() != xhat.ncols() {
        return Err(SolveError::ShapeMismatch(format!(
            "gradient is {}x{}, expected {0}x{0} to match Xhat^T Xhat",
            grad.nrows(),
            grad.ncols(),
        )));
    }
    let mut out = (xhat.transpose() * xhat + grad) / xhat.nrows() as f64;
    la::symmetrize(&mut out);
    Ok(out)
}

/// Numerical rank from a non-increasing spectrum: the first `r` from the
/// top with `s_r / s_{r+1}` above the ratio threshold. Returns 0 for an
/// all-negligible spectrum and full rank when no gap exists.
///
/// Scanning from the dominant side keeps the estimate insensitive to
/// spurious ratios inside an already-negligible tail.
pub fn rank_estimate(singular_values: &[f64], ratio_threshold: f64) -> usize {
    if singular_values.is_empty() {
        return 0;
    }
    let smax = singular_values[0];
    if !(smax > 0.0) || singular_values.iter().all(|&s| s <= 1e-12 * smax) {
        return 0;
    }
    for r in 1..singular_values.len() {
        if singular_values[r - 1] / singular_values[r] > ratio_threshold {
            return r;
        }
    }
    singular_values.len()
}

fn trace_inverse(psi: &DMatrix<f64>) -> Result<f64, SolveError> {
    let factor = la::factor_spd(psi, f64::EPSILON * psi.trace().abs().max(1.0))
        .map_err(|e| SolveError::SingularSystem {
            jitter: e.last_jitter,
        })?;
    Ok(factor.inverse().trace())
}

fn ensure_finite(mat: &DMatrix<f64>, iter: usize) -> Result<(), SolveError> {
    if mat.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SolveError::NumericalBreakdown { iter })
    }
}

fn run(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &BarmConfig,
    mut trace: Option<&mut SolveTrace>,
) -> Result<RecoveryReport, SolveError> {
    config.validate()?;
    check_b(op, b)?;
    let (n, m, p) = (op.n(), op.m(), op.p());
    let lambda = config.lambda;
    let symmetric = config.mode == SolveMode::Symmetric;
    let fast_col = matches!(
        op.kind(),
        OperatorKind::Completion | OperatorKind::BlockDiagonal
    );
    let fast_row = op.kind() == OperatorKind::Completion;

    let mut state = BarmState::init(op, config.mode);
    let mut prev_x: Option<DVector<f64>> = None;
    let mut converged = false;
    let mut xhat_mat = DMatrix::zeros(n, m);

    for iter in 1..=config.max_iterations {
        // E-step pieces: Gram assemblies and the combined covariance factor.
        let gram_c = if symmetric {
            op.gram_col(&state.psi_c, None)
        } else {
            op.gram_col(&state.psi_c, Some(&state.nu))
        };
        let gram_r = state.psi_r.as_ref().map(|pr| op.gram_row(pr));
        let mut sigma = match &gram_r {
            Some(gr) => 0.5 * (&gram_c + gr),
            None => gram_c.clone(),
        };
        for d in 0..p {
            sigma[(d, d)] += lambda;
        }
        let factor = factor_sigma(&sigma, lambda)?;
        let w = factor.solve_vector(b);

        let mut cost = b.dot(&w) + factor.logdet();
        if config.gamma_reg > 0.0 {
            cost += config.gamma_reg * trace_inverse(&state.psi_c)?;
            if let Some(pr) = &state.psi_r {
                cost += config.gamma_reg * trace_inverse(pr)?;
            }
        }
        if !cost.is_finite() {
            return Err(SolveError::NumericalBreakdown { iter });
        }

        xhat_mat = prior_cov_adjoint(op, &state, &w)?;
        ensure_finite(&xhat_mat, iter)?;
        let xvec = vec_of(&xhat_mat);
        state.xhat = xvec.clone();
        state.cost = cost;
        state.iter = iter;
        if let Some(t) = trace.as_deref_mut() {
            t.costs.push(cost);
            t.xhats.push(xvec.clone());
        }

        if let Some(prev) = &prev_x {
            let denom = prev.norm().max(1e-12);
            if (&xvec - prev).norm() / denom < config.convergence_tol {
                converged = true;
                break;
            }
        }
        prev_x = Some(xvec);

        // M-step: gradient bounds and covariance updates.
        if symmetric {
            let quad_c = if fast_col {
                op.col_quad_sum(&state.psi_c, None, lambda, None)?
            } else {
                let mut res_c = gram_c;
                for d in 0..p {
                    res_c[(d, d)] += lambda;
                }
                let fc = factor_sigma(&res_c, lambda)?;
                op.col_quad_sum(&state.psi_c, None, lambda, Some(&fc))?
            };
            let grad_c = &state.psi_c * m as f64 - quad_c;

            let psi_r = state.psi_r.as_ref().expect("symmetric mode");
            let quad_r = if fast_row {
                op.row_quad_sum(psi_r, lambda, None)?
            } else {
                let mut res_r = gram_r.expect("symmetric mode");
                for d in 0..p {
                    res_r[(d, d)] += lambda;
                }
                let fr = factor_sigma(&res_r, lambda)?;
                op.row_quad_sum(psi_r, lambda, Some(&fr))?
            };
            let grad_r = psi_r * n as f64 - quad_r;

            let mut num_c = &xhat_mat * xhat_mat.transpose() + grad_c;
            let mut num_r = xhat_mat.transpose() * &xhat_mat + grad_r;
            if config.gamma_reg > 0.0 {
                for d in 0..n {
                    num_c[(d, d)] += config.gamma_reg;
                }
                for d in 0..m {
                    num_r[(d, d)] += config.gamma_reg;
                }
            }
            state.psi_c = la::clamp_psd(&(num_c / m as f64), config.eig_floor);
            state.psi_r = Some(la::clamp_psd(&(num_r / n as f64), config.eig_floor));
            ensure_finite(&state.psi_c, iter)?;
            ensure_finite(state.psi_r.as_ref().unwrap(), iter)?;
        } else {
            // The resolvent of the column gradient is exactly the posterior
            // covariance already factored above.
            let quad = op.col_quad_sum(&state.psi_c, Some(&state.nu), lambda, Some(&factor))?;
            let grad = &state.psi_c * m as f64 - quad;
            let mut num = &xhat_mat * xhat_mat.transpose() + grad;
            if config.gamma_reg > 0.0 {
                for d in 0..n {
                    num[(d, d)] += config.gamma_reg;
                }
            }
            state.psi_c = la::clamp_psd(&(num / m as f64), config.eig_floor);
            ensure_finite(&state.psi_c, iter)?;
        }
    }

    RecoveryReport::from_estimate(
        op,
        b,
        xhat_mat,
        state.iter,
        converged,
        state.cost,
    )
    .map_err(SolveError::from)
}

/// Run BARM to convergence. Non-convergence within the iteration budget is
/// reported in the `converged` flag, not as an error.
pub fn solve(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &BarmConfig,
) -> Result<RecoveryReport, SolveError> {
    run(op, b, config, None)
}

/// Like [`solve`], also returning the per-iteration cost and mean history.
pub fn solve_traced(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &BarmConfig,
) -> Result<(RecoveryReport, SolveTrace), SolveError> {
    let mut trace = SolveTrace::default();
    let report = run(op, b, config, Some(&mut trace))?;
    Ok((report, trace))
}
