//! Reference algorithms: nuclear-norm minimization and IRLS0.
//!
//! The nuclear-norm solver is an operator-splitting (ADMM) method whose
//! proximal step is singular value thresholding; the constrained mode keeps
//! every iterate exactly feasible by projecting onto `{x : A x = b}`, so
//! convexity plus the returned dual certificate make the result auditable.
//!
//! IRLS0 minimizes `sum_i log(s_i[X]^2 + gamma)` by iteratively reweighted
//! least squares with a multiplicatively decreasing `gamma` schedule. Each
//! inner step solves an equality-constrained weighted least squares problem
//! through the same `p x p` dual system the BARM posterior mean uses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::la;
use crate::linops::{unvec, vec_of, AffineOperator, OperatorKind};
use crate::solver::{RecoveryReport, SolveError};

/// Shrink the spectrum by `threshold`, keeping singular vectors.
pub fn svt(x: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    assert!(threshold >= 0.0, "threshold must be nonnegative");
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let shrunk = svd.singular_values.map(|s| (s - threshold).max(0.0));
    &u * DMatrix::from_diagonal(&shrunk) * &v_t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NucMode {
    /// `min ||X||_* s.t. b = A(X)`.
    Constrained,
    /// `min (1/lambda) ||b - A(X)||^2 + 2 ||X||_*`.
    Regularized { lambda: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NucConfig {
    pub mode: NucMode,
    /// Initial ADMM penalty; adapted by residual balancing.
    pub rho: f64,
    pub max_iterations: usize,
    /// Relative primal/dual stopping tolerance (and feasibility tolerance).
    pub tol: f64,
}

impl Default for NucConfig {
    fn default() -> Self {
        Self {
            mode: NucMode::Constrained,
            rho: 1.0,
            max_iterations: 5000,
            tol: 1e-9,
        }
    }
}

impl NucConfig {
    pub fn regularized(lambda: f64) -> Self {
        Self {
            mode: NucMode::Regularized { lambda },
            ..Self::default()
        }
    }
}

/// Result of a nuclear-norm solve plus the dual subgradient estimate
/// `W = unvec(A^T y)` (constrained mode) used for optimality certificates.
pub struct NuclearSolution {
    pub report: RecoveryReport,
    pub dual: DMatrix<f64>,
}

/// Whether `A A^T = I` holds exactly (entry sampling, orthonormal rows).
fn orthonormal_rows(op: &AffineOperator) -> bool {
    matches!(
        op.kind(),
        OperatorKind::Completion | OperatorKind::DctSubsampled
    )
}

/// Euclidean projector onto the affine set `{x : A x = b}`.
struct AffineProjector<'a> {
    op: &'a AffineOperator,
    aat_factor: Option<la::SpdFactor>,
}

impl<'a> AffineProjector<'a> {
    fn new(op: &'a AffineOperator) -> Result<Self, SolveError> {
        let aat_factor = if orthonormal_rows(op) {
            None
        } else {
            let eye = DMatrix::identity(op.n(), op.n());
            let aat = op.gram_col(&eye, None);
            let scale = aat.trace().max(f64::MIN_POSITIVE) / op.p() as f64;
            Some(
                la::factor_spd(&aat, 1e-12 * scale).map_err(|e| SolveError::SingularSystem {
                    jitter: e.last_jitter,
                })?,
            )
        };
        Ok(Self { op, aat_factor })
    }

    fn project(&self, v: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        let mut resid = self.op.apply(v)?;
        resid -= b;
        let w = match &self.aat_factor {
            Some(f) => f.solve_vector(&resid),
            None => resid,
        };
        Ok(v - self.op.adjoint(&w)?)
    }
}

/// Certificate quantities at a candidate optimum of the constrained problem.
///
/// Splits the dual matrix `W` in the singular basis of `xhat` truncated at
/// rank `r`: returns the Frobenius distance of the tangent-space part from
/// `U_r V_r^T` and the spectral norm of the orthogonal-complement block. At
/// an exact optimum the first vanishes and the second is at most one.
pub fn nuclear_certificate(xhat: &DMatrix<f64>, dual: &DMatrix<f64>, r: usize) -> (f64, f64) {
    let (n, m) = xhat.shape();
    assert!(r > 0 && r <= n.min(m));
    let svd = xhat.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let b = u.transpose() * dual * v_t.transpose();
    let k = n.min(m);
    let mut tangent_err = 0.0f64;
    for i in 0..k.min(b.nrows()) {
        for j in 0..k.min(b.ncols()) {
            if i < r || j < r {
                let target = if i == j && i < r { 1.0 } else { 0.0 };
                tangent_err += (b[(i, j)] - target).powi(2);
            }
        }
    }
    // Complement block in the full ambient space, including directions
    // outside the span of the thin factors.
    let ur = u.columns(0, r).into_owned();
    let vr = v_t.rows(0, r).transpose().into_owned();
    let proj_rows = DMatrix::identity(n, n) - &ur * ur.transpose();
    let proj_cols = DMatrix::identity(m, m) - &vr * vr.transpose();
    let complement = proj_rows * dual * proj_cols;
    let spectral = complement
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max);
    (tangent_err.sqrt(), spectral)
}

/// Solve the nuclear-norm problem and keep the dual estimate.
pub fn nuclear_norm_solve_detailed(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &NucConfig,
) -> Result<NuclearSolution, SolveError> {
    if b.len() != op.p() {
        return Err(SolveError::ShapeMismatch(format!(
            "observation vector has length {}, operator produces {}",
            b.len(),
            op.p()
        )));
    }
    if !(config.rho > 0.0) || !(config.tol > 0.0) || config.max_iterations == 0 {
        return Err(SolveError::InvalidConfig(
            "rho, tol and max_iterations must be positive".into(),
        ));
    }
    match config.mode {
        NucMode::Constrained => admm_constrained(op, b, config),
        NucMode::Regularized { lambda } => {
            if !(lambda > 0.0) {
                return Err(SolveError::InvalidConfig("lambda must be positive".into()));
            }
            regularized(op, b, lambda, config)
        }
    }
}

/// Solve the nuclear-norm problem configured in `config`.
pub fn nuclear_norm_solve(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &NucConfig,
) -> Result<RecoveryReport, SolveError> {
    nuclear_norm_solve_detailed(op, b, config).map(|s| s.report)
}

fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    x.clone().svd(false, false).singular_values.iter().sum()
}

fn admm_constrained(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &NucConfig,
) -> Result<NuclearSolution, SolveError> {
    let (n, m) = (op.n(), op.m());
    let projector = AffineProjector::new(op)?;
    let mut rho = config.rho;
    let mut x = unvec(&projector.project(&DVector::zeros(n * m), b)?, n, m);
    let mut z = x.clone();
    let mut u = DMatrix::zeros(n, m);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=config.max_iterations {
        iterations = iter;
        let v = vec_of(&(&z - &u));
        x = unvec(&projector.project(&v, b)?, n, m);
        let z_old = z;
        z = svt(&(&x + &u), 1.0 / rho);
        u += &x - &z;

        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_old).norm();
        let scale = x.norm().max(z.norm()).max(1e-12);
        if primal <= config.tol * scale && dual <= config.tol * scale.max(rho * u.norm()) {
            converged = true;
            break;
        }
        if iter % 10 == 0 {
            if primal > 10.0 * dual && rho < 1e6 {
                rho *= 2.0;
                u /= 2.0;
            } else if dual > 10.0 * primal && rho > 1e-6 {
                rho /= 2.0;
                u *= 2.0;
            }
        }
    }

    let dual_w = &u * rho;
    let cost = nuclear_norm(&x);
    let report = RecoveryReport::from_estimate(op, b, x, iterations, converged, cost)?;
    Ok(NuclearSolution {
        report,
        dual: dual_w,
    })
}

fn regularized(
    op: &AffineOperator,
    b: &DVector<f64>,
    lambda: f64,
    config: &NucConfig,
) -> Result<NuclearSolution, SolveError> {
    let (n, m, p) = (op.n(), op.m(), op.p());

    // Full entry observation: the problem is exactly a proximal step.
    if op.kind() == OperatorKind::Completion && p == n * m {
        let target = unvec(&op.adjoint(b)?, n, m);
        let x = svt(&target, lambda);
        let cost = (b - op.apply(&vec_of(&x))?).norm_squared() / lambda + 2.0 * nuclear_norm(&x);
        let dual = (&target - &x) / lambda;
        let report = RecoveryReport::from_estimate(op, b, x, 1, true, cost)?;
        return Ok(NuclearSolution { report, dual });
    }

    let alpha = 2.0 / lambda;
    let orthonormal = orthonormal_rows(op);
    let aat = if orthonormal {
        None
    } else {
        let eye = DMatrix::identity(n, n);
        Some(op.gram_col(&eye, None))
    };
    let mut rho = config.rho;
    let factor_for = |rho: f64| -> Result<Option<la::SpdFactor>, SolveError> {
        match &aat {
            None => Ok(None),
            Some(g) => {
                let mut shifted = g * alpha;
                for d in 0..p {
                    shifted[(d, d)] += rho;
                }
                la::factor_spd(&shifted, 1e-12 * rho)
                    .map(Some)
                    .map_err(|e| SolveError::SingularSystem {
                        jitter: e.last_jitter,
                    })
            }
        }
    };
    let mut factor = factor_for(rho)?;
    let atb = op.adjoint(b)? * alpha;

    let mut x = unvec(&op.min_frobenius_solution(b)?, n, m);
    let mut z = x.clone();
    let mut u = DMatrix::zeros(n, m);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=config.max_iterations {
        iterations = iter;
        // x-step: (alpha A^T A + rho I) x = alpha A^T b + rho (z - u),
        // inverted through the p x p system by the Woodbury identity.
        let rhs = &atb + vec_of(&(&z - &u)) * rho;
        let arhs = op.apply(&rhs)?;
        let solved = match &factor {
            Some(f) => f.solve_vector(&arhs),
            None => arhs / (rho + alpha),
        };
        let xv = (&rhs - op.adjoint(&solved)? * alpha) / rho;
        x = unvec(&xv, n, m);

        let z_old = z;
        z = svt(&(&x + &u), 2.0 / rho);
        u += &x - &z;

        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_old).norm();
        let scale = x.norm().max(z.norm()).max(1e-12);
        if primal <= config.tol * scale && dual <= config.tol * scale.max(rho * u.norm()) {
            converged = true;
            break;
        }
        if iter % 10 == 0 {
            let mut changed = false;
            if primal > 10.0 * dual && rho < 1e6 {
                rho *= 2.0;
                u /= 2.0;
                changed = true;
            } else if dual > 10.0 * primal && rho > 1e-6 {
                rho /= 2.0;
                u *= 2.0;
                changed = true;
            }
            if changed {
                factor = factor_for(rho)?;
            }
        }
    }

    let cost = (b - op.apply(&vec_of(&z))?).norm_squared() / lambda + 2.0 * nuclear_norm(&z);
    let dual = &u * rho;
    let report = RecoveryReport::from_estimate(op, b, z, iterations, converged, cost)?;
    Ok(NuclearSolution { report, dual })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Irls0Config {
    /// Starting smoothing level; defaults to `s_1(X0)^2 / 100` at the
    /// minimum-Frobenius feasible point.
    pub gamma_init: Option<f64>,
    /// Multiplicative factor applied per outer epoch.
    pub gamma_decay: f64,
    pub gamma_floor: f64,
    pub inner_iterations: usize,
    pub max_outer: usize,
    pub convergence_tol: f64,
}

impl Default for Irls0Config {
    fn default() -> Self {
        Self {
            gamma_init: None,
            gamma_decay: 1.0 / 1.5,
            gamma_floor: 1e-10,
            inner_iterations: 10,
            max_outer: 120,
            convergence_tol: 1e-8,
        }
    }
}

impl Irls0Config {
    fn validate(&self) -> Result<(), SolveError> {
        if !(self.gamma_decay > 0.0 && self.gamma_decay < 1.0) {
            return Err(SolveError::InvalidConfig(
                "gamma_decay must lie in (0, 1)".into(),
            ));
        }
        if !(self.gamma_floor > 0.0) {
            return Err(SolveError::InvalidConfig(
                "gamma_floor must be positive".into(),
            ));
        }
        if self.inner_iterations == 0 || self.max_outer == 0 {
            return Err(SolveError::InvalidConfig(
                "iteration caps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded IRLS0 inner step.
#[derive(Clone, Copy, Debug)]
pub struct Irls0Step {
    pub gamma: f64,
    /// `sum_i log(s_i^2 + gamma)` over the min(n, m) singular values.
    pub objective: f64,
    /// `||A(X) - b|| / ||b||`.
    pub residual: f64,
}

fn smoothed_log_rank(x: &DMatrix<f64>, gamma: f64) -> f64 {
    x.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| (s * s + gamma).ln())
        .sum()
}

/// Weighted least squares step: `argmin tr(W X X^T)` over `A vec(X) = b`
/// with `W = (X_prev X_prev^T + gamma I)^-1`, solved through the dual
/// `p x p` system with `W^-1` as the prior covariance.
pub(crate) fn irls0_wls_step(
    op: &AffineOperator,
    x_prev: &DMatrix<f64>,
    gamma: f64,
    b: &DVector<f64>,
) -> Result<DMatrix<f64>, SolveError> {
    let n = op.n();
    let mut psi_w = x_prev * x_prev.transpose();
    for d in 0..n {
        psi_w[(d, d)] += gamma;
    }
    let gram = op.gram_col(&psi_w, None);
    let scale = gram.trace().max(f64::MIN_POSITIVE) / op.p() as f64;
    // lambda -> 0: start from a relative epsilon and escalate only on failure.
    let base = 1e-13 * scale;
    let factor = la::factor_spd(&gram, base).map_err(|e| SolveError::SingularSystem {
        jitter: e.last_jitter,
    })?;
    let w = factor.solve_vector(b);
    let xa = unvec(&op.adjoint(&w)?, n, op.m());
    Ok(&psi_w * xa)
}

/// IRLS0 with recorded per-step history.
pub fn irls0_solve_traced(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &Irls0Config,
) -> Result<(RecoveryReport, Vec<Irls0Step>), SolveError> {
    config.validate()?;
    if b.len() != op.p() {
        return Err(SolveError::ShapeMismatch(format!(
            "observation vector has length {}, operator produces {}",
            b.len(),
            op.p()
        )));
    }
    let (n, m) = (op.n(), op.m());
    let bnorm = b.norm().max(f64::MIN_POSITIVE);

    let mut x = unvec(&op.min_frobenius_solution(b)?, n, m);
    let smax = x.clone().svd(false, false).singular_values[0];
    let mut gamma = config
        .gamma_init
        .unwrap_or(smax * smax / 100.0)
        .max(config.gamma_floor);

    let mut steps = Vec::new();
    let mut converged = false;
    let mut total_steps = 0;

    for _epoch in 0..config.max_outer {
        let mut stable = false;
        for _ in 0..config.inner_iterations {
            let x_new = irls0_wls_step(op, &x, gamma, b)?;
            total_steps += 1;
            let residual = (op.apply(&vec_of(&x_new))? - b).norm() / bnorm;
            steps.push(Irls0Step {
                gamma,
                objective: smoothed_log_rank(&x_new, gamma),
                residual,
            });
            let change = (&x_new - &x).norm() / x.norm().max(1e-12);
            x = x_new;
            if change < config.convergence_tol {
                stable = true;
                break;
            }
        }
        if gamma <= config.gamma_floor {
            if stable {
                converged = true;
                break;
            }
        } else {
            gamma = (gamma * config.gamma_decay).max(config.gamma_floor);
        }
    }

    let cost = smoothed_log_rank(&x, gamma);
    let report = RecoveryReport::from_estimate(op, b, x, total_steps, converged, cost)?;
    Ok((report, steps))
}

/// IRLS0 with the default homotopy schedule.
pub fn irls0_solve(
    op: &AffineOperator,
    b: &DVector<f64>,
    config: &Irls0Config,
) -> Result<RecoveryReport, SolveError> {
    irls0_solve_traced(op, b, config).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench;
    use crate::linops::{EnsembleKind, EnsembleSpec};
    use crate::seed;
    use approx::assert_relative_eq;

    #[test]
    fn svt_with_zero_threshold_is_identity() {
        let x = seed::gaussian_matrix(&mut seed::rng(1), 4, 3);
        assert_relative_eq!(svt(&x, 0.0), x, epsilon = 1e-12);
    }

    #[test]
    fn svt_above_largest_singular_value_is_zero() {
        let x = seed::gaussian_matrix(&mut seed::rng(2), 3, 3);
        let smax = x.clone().svd(false, false).singular_values[0];
        let out = svt(&x, smax * 1.01);
        assert!(out.norm() <= 1e-12);
    }

    #[test]
    fn svt_on_diagonal_matrix() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let out = svt(&x, 2.0);
        assert_relative_eq!(
            out,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
            epsilon = 1e-12
        );
    }

    #[test]
    fn constrained_identity_returns_observations() {
        let (n, m) = (2, 3);
        let op = AffineOperator::dense(n, m, DMatrix::identity(6, 6)).unwrap();
        let b = seed::gaussian_vector(&mut seed::rng(3), 6);
        let report = nuclear_norm_solve(&op, &b, &NucConfig::default()).unwrap();
        assert!(report.converged);
        assert_relative_eq!(vec_of(&report.xhat), b, epsilon = 1e-6);
    }

    #[test]
    fn constrained_completion_recovery_with_certificate() {
        // Rank-1 8x8 with 90% of entries observed, first row and column
        // forced into the sample.
        let (n, m) = (8, 8);
        let x0 = bench::gen_lowrank(n, m, 1, 11, 0.0).unwrap();
        let p = (n * m * 9) / 10;
        let mut indices: Vec<usize> = Vec::new();
        for r in 0..n {
            indices.push(r);
        }
        for c in 1..m {
            indices.push(c * n);
        }
        let mut rng = seed::rng(12);
        let mut rest: Vec<usize> = (0..n * m).filter(|i| !indices.contains(i)).collect();
        use rand::seq::SliceRandom;
        rest.shuffle(&mut rng);
        indices.extend(rest.into_iter().take(p - indices.len()));
        let op = AffineOperator::completion(n, m, indices).unwrap();
        let b = op.apply(&vec_of(&x0)).unwrap();

        let sol = nuclear_norm_solve_detailed(&op, &b, &NucConfig::default()).unwrap();
        let relerr = bench::rel(&x0, &sol.report.xhat).unwrap();
        assert!(relerr < 1e-3, "rel {relerr}");
        let (tangent, complement) = nuclear_certificate(&sol.report.xhat, &sol.dual, 1);
        assert!(tangent <= 1e-3, "tangent part off by {tangent}");
        assert!(complement <= 1.0 + 1e-3, "complement norm {complement}");
    }

    #[test]
    fn regularized_full_observation_equals_svt() {
        let (n, m) = (4, 4);
        let op = AffineOperator::completion(n, m, (0..16).collect()).unwrap();
        let x = seed::gaussian_matrix(&mut seed::rng(21), n, m);
        let b = op.apply(&vec_of(&x)).unwrap();
        let lambda = 0.7;
        let report = nuclear_norm_solve(&op, &b, &NucConfig::regularized(lambda)).unwrap();
        assert_eq!(report.xhat, svt(&x, lambda));
    }

    #[test]
    fn regularized_dense_identity_soft_thresholds_spectrum() {
        let (n, m) = (4, 4);
        let op = AffineOperator::dense(n, m, DMatrix::identity(16, 16)).unwrap();
        let x = seed::gaussian_matrix(&mut seed::rng(22), n, m);
        let b = op.apply(&vec_of(&x)).unwrap();
        let lambda = 0.5;
        let report = nuclear_norm_solve(&op, &b, &NucConfig::regularized(lambda)).unwrap();
        let expected: Vec<f64> = x
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .map(|s| (s - lambda).max(0.0))
            .collect();
        for (got, want) in report.singular_values.iter().zip(expected.iter()) {
            assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn irls0_with_invertible_operator_solves_in_one_step() {
        let (n, m) = (3, 3);
        let a = seed::gaussian_matrix(&mut seed::rng(31), 9, 9);
        let xtrue = seed::gaussian_vector(&mut seed::rng(32), 9);
        let b = &a * &xtrue;
        let op = AffineOperator::dense(n, m, a).unwrap();
        for gamma in [1e-6, 1.0, 1e6] {
            let step = irls0_wls_step(&op, &unvec(&DVector::zeros(9), n, m), gamma, &b).unwrap();
            assert_relative_eq!(vec_of(&step), xtrue, epsilon = 1e-7);
        }
        let report = irls0_solve(&op, &b, &Irls0Config::default()).unwrap();
        assert!((vec_of(&report.xhat) - &xtrue).norm() / xtrue.norm() < 1e-8);
    }

    #[test]
    fn irls0_huge_gamma_step_is_min_frobenius_solution() {
        let (n, m, p) = (4, 4, 9);
        let op =
            AffineOperator::generate(&EnsembleSpec::new(EnsembleKind::Gaussian, n, m, p, 33))
                .unwrap();
        let b = seed::gaussian_vector(&mut seed::rng(34), p);
        let minfro = unvec(&op.min_frobenius_solution(&b).unwrap(), n, m);
        let step = irls0_wls_step(&op, &minfro, 1e12, &b).unwrap();
        assert_relative_eq!(step, minfro, epsilon = 1e-6);
    }

    #[test]
    fn irls0_inner_objective_monotone_and_feasible() {
        let (n, m, p) = (6, 6, 20);
        let op = AffineOperator::generate(&EnsembleSpec::new(
            EnsembleKind::Completion,
            n,
            m,
            p,
            35,
        ))
        .unwrap();
        let x0 = bench::gen_lowrank(n, m, 2, 36, 0.0).unwrap();
        let b = op.apply(&vec_of(&x0)).unwrap();
        let (_, steps) = irls0_solve_traced(&op, &b, &Irls0Config::default()).unwrap();
        assert!(!steps.is_empty());
        for w in steps.windows(2) {
            if w[0].gamma == w[1].gamma {
                assert!(
                    w[1].objective <= w[0].objective + 1e-9,
                    "objective rose from {} to {} at gamma {}",
                    w[0].objective,
                    w[1].objective,
                    w[0].gamma
                );
            }
        }
        for s in &steps {
            assert!(s.residual <= 1e-8, "infeasible iterate: {}", s.residual);
        }
    }

    #[test]
    fn irls0_completion_statistical_recovery() {
        let (n, m, p) = (8, 8, 30);
        let mut successes = 0;
        for trial in 0..20 {
            let s = seed::mix(40_000, trial);
            let op = AffineOperator::generate(&EnsembleSpec::new(
                EnsembleKind::Completion,
                n,
                m,
                p,
                s,
            ))
            .unwrap();
            let x0 = bench::gen_lowrank(n, m, 1, seed::mix(s, 1), 0.0).unwrap();
            let b = op.apply(&vec_of(&x0)).unwrap();
            let report = irls0_solve(&op, &b, &Irls0Config::default()).unwrap();
            if bench::rel(&x0, &report.xhat).unwrap() < 1e-3 {
                successes += 1;
            }
        }
        assert!(successes >= 14, "only {successes}/20 recoveries");
    }
}
