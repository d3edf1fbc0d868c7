//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// All jitter attempts up to the trace cap failed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IndefiniteError {
    pub last_jitter: f64,
}

/// Cholesky factor of `M + jitter I` for the smallest jitter in the
/// escalation sequence `0, base, 10 base, ...` (capped at `1e-6 tr(M)`)
/// that factors successfully.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

pub(crate) fn factor_spd(m: &DMatrix<f64>, base_jitter: f64) -> Result<SpdFactor, IndefiniteError> {
    debug_assert_eq!(m.nrows(), m.ncols());
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(SpdFactor { chol });
    }
    let cap = (1e-6 * m.trace()).max(f64::MIN_POSITIVE);
    let mut jitter = base_jitter.max(f64::MIN_POSITIVE).min(cap);
    loop {
        let mut shifted = m.clone();
        for d in 0..m.nrows() {
            shifted[(d, d)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(SpdFactor { chol });
        }
        if jitter >= cap {
            return Err(IndefiniteError { last_jitter: jitter });
        }
        jitter = (jitter * 10.0).min(cap);
    }
}

/// In-place symmetrization `(M + M^T) / 2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Project a symmetric matrix to the PSD cone and floor its spectrum at
/// `rel_floor` times the largest eigenvalue.
pub(crate) fn clamp_psd(m: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lmax > 0.0) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let floor = rel_floor * lmax;
    let mut clamped = eig;
    for v in clamped.eigenvalues.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    clamped.recompose()
}

/// Submatrix `M[rows, cols]`.
pub(crate) fn gather(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Column gather `M[:, cols]`.
pub(crate) fn gather_cols(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, b| m[(r, cols[b])])
}
