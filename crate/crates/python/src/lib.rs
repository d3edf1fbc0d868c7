//! Python bindings: operators, the BARM solver and the baselines, with
//! plain lists crossing the boundary.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use barm::baselines::{self, Irls0Config, NucConfig};
use barm::bench;
use barm::linops::{vec_of, AffineOperator, EnsembleKind, EnsembleSpec};
use barm::solver::{self, BarmConfig, RecoveryReport, SolveMode};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_kind(kind: &str) -> PyResult<EnsembleKind> {
    Ok(match kind {
        "gaussian" => EnsembleKind::Gaussian,
        "correlated" => EnsembleKind::Correlated,
        "completion" => EnsembleKind::Completion,
        "dct-subsampled" => EnsembleKind::DctSubsampled,
        "block-diagonal" => EnsembleKind::BlockDiagonal,
        other => return Err(value_err(format!("unknown ensemble kind {other:?}"))),
    })
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(value_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn matrix_to_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect())
        .collect()
}

/// An affine measurement operator mapping n x m matrices to p values.
#[pyclass(name = "Operator")]
struct PyOperator {
    inner: AffineOperator,
}

#[pymethods]
impl PyOperator {
    /// Draw an operator from a seeded ensemble. Kinds: "gaussian",
    /// "correlated", "completion", "dct-subsampled", "block-diagonal".
    #[staticmethod]
    #[pyo3(signature = (kind, n, m, p, seed, corr_decay=0.5))]
    fn generate(
        kind: &str,
        n: usize,
        m: usize,
        p: usize,
        seed: u64,
        corr_decay: f64,
    ) -> PyResult<Self> {
        let mut spec = EnsembleSpec::new(parse_kind(kind)?, n, m, p, seed);
        spec.corr_decay = corr_decay;
        Ok(Self {
            inner: AffineOperator::generate(&spec).map_err(value_err)?,
        })
    }

    /// Entry-sampling operator from row-major flat indices.
    #[staticmethod]
    fn completion(n: usize, m: usize, indices: Vec<usize>) -> PyResult<Self> {
        let col_major = indices
            .iter()
            .map(|&rm| {
                let (r, c) = (rm / m, rm % m);
                c * n + r
            })
            .collect();
        Ok(Self {
            inner: AffineOperator::completion(n, m, col_major).map_err(value_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    /// Measure a matrix given as a list of rows.
    fn apply(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let xm = matrix_from_rows(x)?;
        if xm.shape() != (self.inner.n(), self.inner.m()) {
            return Err(value_err(format!(
                "expected a {}x{} matrix",
                self.inner.n(),
                self.inner.m()
            )));
        }
        let out = self.inner.apply(&vec_of(&xm)).map_err(value_err)?;
        Ok(out.iter().copied().collect())
    }

    /// Adjoint of the measurement map, returned as a list of rows.
    fn adjoint(&self, y: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let out = self
            .inner
            .adjoint(&DVector::from_vec(y))
            .map_err(value_err)?;
        Ok(matrix_to_rows(&barm::linops::unvec(
            &out,
            self.inner.n(),
            self.inner.m(),
        )))
    }
}

/// Outcome of a recovery: estimate plus diagnostics.
#[pyclass(name = "Report")]
struct PyReport {
    #[pyo3(get)]
    xhat: Vec<Vec<f64>>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    residual: f64,
    #[pyo3(get)]
    singular_values: Vec<f64>,
    #[pyo3(get)]
    est_rank: usize,
    #[pyo3(get)]
    final_cost: f64,
}

impl From<RecoveryReport> for PyReport {
    fn from(r: RecoveryReport) -> Self {
        Self {
            xhat: matrix_to_rows(&r.xhat),
            iterations: r.iterations,
            converged: r.converged,
            residual: r.residual,
            singular_values: r.singular_values,
            est_rank: r.est_rank,
            final_cost: r.final_cost,
        }
    }
}

/// Run the BARM solver.
#[pyfunction]
#[pyo3(signature = (op, b, lam=1e-10, mode="symmetric", max_iterations=500, tol=1e-8))]
fn solve(
    op: &PyOperator,
    b: Vec<f64>,
    lam: f64,
    mode: &str,
    max_iterations: usize,
    tol: f64,
) -> PyResult<PyReport> {
    let mode = match mode {
        "column" => SolveMode::Column,
        "symmetric" => SolveMode::Symmetric,
        other => return Err(value_err(format!("unknown mode {other:?}"))),
    };
    let config = BarmConfig {
        lambda: lam,
        mode,
        max_iterations,
        convergence_tol: tol,
        ..BarmConfig::default()
    };
    solver::solve(&op.inner, &DVector::from_vec(b), &config)
        .map(PyReport::from)
        .map_err(runtime_err)
}

/// Nuclear-norm minimization; constrained unless `lam` is given.
#[pyfunction]
#[pyo3(signature = (op, b, lam=None))]
fn nuclear_solve(op: &PyOperator, b: Vec<f64>, lam: Option<f64>) -> PyResult<PyReport> {
    let config = match lam {
        Some(l) => NucConfig::regularized(l),
        None => NucConfig::default(),
    };
    baselines::nuclear_norm_solve(&op.inner, &DVector::from_vec(b), &config)
        .map(PyReport::from)
        .map_err(runtime_err)
}

/// IRLS0 with the default decreasing-gamma schedule.
#[pyfunction]
fn irls0_solve(op: &PyOperator, b: Vec<f64>) -> PyResult<PyReport> {
    baselines::irls0_solve(&op.inner, &DVector::from_vec(b), &Irls0Config::default())
        .map(PyReport::from)
        .map_err(runtime_err)
}

/// Seeded rank-r ground truth as a list of rows.
#[pyfunction]
#[pyo3(signature = (n, m, r, seed, decay=0.0))]
fn gen_lowrank(n: usize, m: usize, r: usize, seed: u64, decay: f64) -> PyResult<Vec<Vec<f64>>> {
    bench::gen_lowrank(n, m, r, seed, decay)
        .map(|x| matrix_to_rows(&x))
        .map_err(value_err)
}

/// Relative Frobenius error between a ground truth and an estimate.
#[pyfunction]
fn rel(x0: Vec<Vec<f64>>, xhat: Vec<Vec<f64>>) -> PyResult<f64> {
    bench::rel(&matrix_from_rows(x0)?, &matrix_from_rows(xhat)?).map_err(value_err)
}

/// Add seeded Gaussian noise with standard deviation sigma.
#[pyfunction]
fn add_noise(x: Vec<Vec<f64>>, sigma: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_to_rows(&bench::add_noise(
        &matrix_from_rows(x)?,
        sigma,
        seed,
    )))
}

/// Numerical rank by the dominant spectral-gap rule.
#[pyfunction]
#[pyo3(signature = (singular_values, ratio_threshold=1e3))]
fn estimate_rank(singular_values: Vec<f64>, ratio_threshold: f64) -> usize {
    solver::rank_estimate(&singular_values, ratio_threshold)
}

#[pymodule]
fn barm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(nuclear_solve, m)?)?;
    m.add_function(wrap_pyfunction!(irls0_solve, m)?)?;
    m.add_function(wrap_pyfunction!(gen_lowrank, m)?)?;
    m.add_function(wrap_pyfunction!(rel, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rank, m)?)?;
    Ok(())
}
