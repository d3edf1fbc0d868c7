//! Affine measurement operators and their block decompositions.
//!
//! An operator maps an `n x m` matrix `X` to `p` scalar measurements
//! `b = A vec(X)` where `vec` stacks columns (column-major). Everything in
//! the crate uses that convention. Four payload kinds cover the benchmark
//! ensembles:
//!
//! - `dense`: an explicit `p x nm` matrix,
//! - `completion`: each measurement reads one entry of `X`,
//! - `dct-subsampled`: an orthonormal 2-D DCT of `X` followed by coefficient
//!   sampling,
//! - `block-diagonal`: column `i` of `X` is measured by its own block `A_i`.
//!
//! Completion operators never materialize `A`; their Gram assemblies reduce
//! to submatrix indexing of the covariance. Column blocks `A_i` (acting on
//! column `i` of `X`) and row blocks `B_j` (the columns of `A` touching row
//! `j` of `X`) are what the solver's covariance updates consume:
//! `sum_i A_i P A_i^T = A (I (x) P) A^T` and
//! `sum_j B_j Q B_j^T = A (Q (x) I) A^T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::la;
use crate::seed;

#[derive(Debug, Error)]
pub enum LinopError {
    #[error("dimension mismatch: expected vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("block index {index} out of range ({limit} blocks)")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("invalid operator specification: {0}")]
    InvalidSpec(String),
    #[error("measurement Gram matrix is numerically singular")]
    SingularGram,
}

/// Structural kind of a constructed operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Dense,
    Completion,
    DctSubsampled,
    BlockDiagonal,
}

/// Random ensemble from which an operator is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    /// iid N(0,1) dense matrix.
    Gaussian,
    /// `sum_i i^(-q) u_i v_i^T`, a correlated, mildly ill-conditioned map.
    Correlated,
    /// Uniform entry sampling without replacement.
    Completion,
    /// Orthonormal 2-D DCT followed by uniform coefficient sampling.
    DctSubsampled,
    /// Per-column iid Gaussian blocks, measurements split as evenly as
    /// possible across columns.
    BlockDiagonal,
}

impl EnsembleKind {
    /// Stable small integer used when deriving per-cell seeds.
    pub fn code(self) -> u64 {
        match self {
            EnsembleKind::Gaussian => 0,
            EnsembleKind::Correlated => 1,
            EnsembleKind::Completion => 2,
            EnsembleKind::DctSubsampled => 3,
            EnsembleKind::BlockDiagonal => 4,
        }
    }
}

fn default_corr_decay() -> f64 {
    0.5
}

/// Deterministic description of an operator draw: identical specs generate
/// bit-identical operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub seed: u64,
    /// Exponent of the singular decay for the correlated kind.
    #[serde(default = "default_corr_decay")]
    pub corr_decay: f64,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, n: usize, m: usize, p: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            m,
            p,
            seed,
            corr_decay: default_corr_decay(),
        }
    }
}

/// Column-major stacking of a matrix.
pub fn vec_of(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(x: &DVector<f64>, n: usize, m: usize) -> DMatrix<f64> {
    assert_eq!(x.len(), n * m, "unvec: length {} != {}x{}", x.len(), n, m);
    DMatrix::from_column_slice(n, m, x.as_slice())
}

/// Index bookkeeping for completion operators. Measurements are ordered by
/// ascending column-major flat index, so each column's measurements form a
/// contiguous range.
#[derive(Clone, Debug)]
pub(crate) struct CompletionData {
    /// Sorted column-major flat indices, one per measurement.
    pub indices: Vec<usize>,
    /// Observed row set per column.
    pub col_rows: Vec<Vec<usize>>,
    /// Measurement offset of each column's first observation.
    pub col_offsets: Vec<usize>,
    /// Per row of X: (measurement index, column) pairs.
    pub row_meas: Vec<Vec<(usize, usize)>>,
}

impl CompletionData {
    fn build(n: usize, m: usize, indices: Vec<usize>) -> Self {
        let mut col_rows = vec![Vec::new(); m];
        let mut row_meas = vec![Vec::new(); n];
        for (k, &idx) in indices.iter().enumerate() {
            let c = idx / n;
            let r = idx % n;
            col_rows[c].push(r);
            row_meas[r].push((k, c));
        }
        let mut col_offsets = Vec::with_capacity(m + 1);
        let mut acc = 0;
        for rows in &col_rows {
            col_offsets.push(acc);
            acc += rows.len();
        }
        col_offsets.push(acc);
        Self {
            indices,
            col_rows,
            col_offsets,
            row_meas,
        }
    }
}

#[derive(Clone, Debug)]
enum Payload {
    Dense(DMatrix<f64>),
    Completion(CompletionData),
    Dct {
        /// Sorted column-major flat indices into the coefficient grid.
        indices: Vec<usize>,
        basis_n: DMatrix<f64>,
        basis_m: DMatrix<f64>,
    },
    BlockDiag {
        blocks: Vec<DMatrix<f64>>,
        offsets: Vec<usize>,
    },
}

/// A linear map from `n x m` matrices to `p` measurements.
///
/// Immutable after construction and safe to share across threads.
#[derive(Clone, Debug)]
pub struct AffineOperator {
    n: usize,
    m: usize,
    p: usize,
    payload: Payload,
}

/// Orthonormal type-II DCT matrix of size `k`.
fn dct_matrix(k: usize) -> DMatrix<f64> {
    let kf = k as f64;
    DMatrix::from_fn(k, k, |i, j| {
        let scale = if i == 0 {
            (1.0 / kf).sqrt()
        } else {
            (2.0 / kf).sqrt()
        };
        scale * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * i as f64 / (2.0 * kf)).cos()
    })
}

fn check_sampled_indices(n: usize, m: usize, indices: &mut Vec<usize>) -> Result<(), LinopError> {
    let nm = n * m;
    if indices.is_empty() {
        return Err(LinopError::InvalidSpec("empty index set".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= nm) {
        return Err(LinopError::InvalidSpec(format!(
            "index {bad} out of range for a {n}x{m} matrix"
        )));
    }
    indices.sort_unstable();
    if indices.windows(2).any(|w| w[0] == w[1]) {
        return Err(LinopError::InvalidSpec("duplicate sampled index".into()));
    }
    Ok(())
}

impl AffineOperator {
    /// Operator from an explicit `p x nm` matrix.
    pub fn dense(n: usize, m: usize, a: DMatrix<f64>) -> Result<Self, LinopError> {
        if a.ncols() != n * m {
            return Err(LinopError::InvalidSpec(format!(
                "dense matrix has {} columns, expected {}",
                a.ncols(),
                n * m
            )));
        }
        Ok(Self {
            n,
            m,
            p: a.nrows(),
            payload: Payload::Dense(a),
        })
    }

    /// Entry-sampling operator observing the given column-major flat indices.
    pub fn completion(n: usize, m: usize, mut indices: Vec<usize>) -> Result<Self, LinopError> {
        check_sampled_indices(n, m, &mut indices)?;
        Ok(Self {
            n,
            m,
            p: indices.len(),
            payload: Payload::Completion(CompletionData::build(n, m, indices)),
        })
    }

    /// Subsampled orthonormal 2-D DCT operator; `indices` are column-major
    /// flat positions in the coefficient grid.
    pub fn dct_subsampled(n: usize, m: usize, mut indices: Vec<usize>) -> Result<Self, LinopError> {
        check_sampled_indices(n, m, &mut indices)?;
        Ok(Self {
            n,
            m,
            p: indices.len(),
            payload: Payload::Dct {
                indices,
                basis_n: dct_matrix(n),
                basis_m: dct_matrix(m),
            },
        })
    }

    /// Block-diagonal operator: block `i` (shape `p_i x n`) measures column
    /// `i` of `X`. Blocks with zero rows are allowed.
    pub fn block_diagonal(n: usize, blocks: Vec<DMatrix<f64>>) -> Result<Self, LinopError> {
        if blocks.is_empty() {
            return Err(LinopError::InvalidSpec("no blocks given".into()));
        }
        if let Some(bad) = blocks.iter().position(|b| b.ncols() != n) {
            return Err(LinopError::InvalidSpec(format!(
                "block {bad} has {} columns, expected {n}",
                blocks[bad].ncols()
            )));
        }
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut acc = 0;
        for b in &blocks {
            offsets.push(acc);
            acc += b.nrows();
        }
        offsets.push(acc);
        Ok(Self {
            n,
            m: blocks.len(),
            p: acc,
            payload: Payload::BlockDiag { blocks, offsets },
        })
    }

    /// Draw an operator from a seeded ensemble.
    pub fn generate(spec: &EnsembleSpec) -> Result<Self, LinopError> {
        if spec.n == 0 || spec.m == 0 || spec.p == 0 {
            return Err(LinopError::InvalidSpec(
                "dimensions and measurement count must be positive".into(),
            ));
        }
        let nm = spec.n * spec.m;
        let mut rng = seed::rng(spec.seed);
        match spec.kind {
            EnsembleKind::Gaussian => {
                let a = seed::gaussian_matrix(&mut rng, spec.p, nm);
                Self::dense(spec.n, spec.m, a)
            }
            EnsembleKind::Correlated => {
                let mut u = seed::gaussian_matrix(&mut rng, spec.p, spec.p);
                let v = seed::gaussian_matrix(&mut rng, nm, spec.p);
                for i in 0..spec.p {
                    let w = ((i + 1) as f64).powf(-spec.corr_decay);
                    u.column_mut(i).scale_mut(w);
                }
                Self::dense(spec.n, spec.m, u * v.transpose())
            }
            EnsembleKind::Completion | EnsembleKind::DctSubsampled => {
                if spec.p > nm {
                    return Err(LinopError::InvalidSpec(format!(
                        "cannot sample {} of {} positions",
                        spec.p, nm
                    )));
                }
                let indices = rand::seq::index::sample(&mut rng, nm, spec.p).into_vec();
                if spec.kind == EnsembleKind::Completion {
                    Self::completion(spec.n, spec.m, indices)
                } else {
                    Self::dct_subsampled(spec.n, spec.m, indices)
                }
            }
            EnsembleKind::BlockDiagonal => {
                if spec.p < spec.m {
                    // Allow it: trailing blocks simply get zero rows.
                }
                let base = spec.p / spec.m;
                let rem = spec.p % spec.m;
                let blocks = (0..spec.m)
                    .map(|i| {
                        let rows = base + usize::from(i < rem);
                        seed::gaussian_matrix(&mut rng, rows, spec.n)
                    })
                    .collect();
                Self::block_diagonal(spec.n, blocks)
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> OperatorKind {
        match &self.payload {
            Payload::Dense(_) => OperatorKind::Dense,
            Payload::Completion(_) => OperatorKind::Completion,
            Payload::Dct { .. } => OperatorKind::DctSubsampled,
            Payload::BlockDiag { .. } => OperatorKind::BlockDiagonal,
        }
    }

    /// Sampled flat indices (column-major) for completion and DCT kinds.
    pub fn sampled_indices(&self) -> Option<&[usize]> {
        match &self.payload {
            Payload::Completion(data) => Some(&data.indices),
            Payload::Dct { indices, .. } => Some(indices),
            _ => None,
        }
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<(), LinopError> {
        if got == expected {
            Ok(())
        } else {
            Err(LinopError::DimensionMismatch { expected, got })
        }
    }

    /// `A x` for `x = vec(X)` of length `nm`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>, LinopError> {
        self.check_len(x.len(), self.n * self.m)?;
        Ok(match &self.payload {
            Payload::Dense(a) => a * x,
            Payload::Completion(data) => {
                DVector::from_iterator(self.p, data.indices.iter().map(|&i| x[i]))
            }
            Payload::Dct {
                indices,
                basis_n,
                basis_m,
            } => {
                let xm = unvec(x, self.n, self.m);
                let coeffs = basis_n * xm * basis_m.transpose();
                let flat = coeffs.as_slice();
                DVector::from_iterator(self.p, indices.iter().map(|&i| flat[i]))
            }
            Payload::BlockDiag { blocks, offsets } => {
                let mut out = DVector::zeros(self.p);
                for (i, blk) in blocks.iter().enumerate() {
                    if blk.nrows() == 0 {
                        continue;
                    }
                    let xi = x.rows(i * self.n, self.n);
                    out.rows_mut(offsets[i], blk.nrows()).copy_from(&(blk * xi));
                }
                out
            }
        })
    }

    /// `A^T y`; satisfies `<A x, y> = <x, A^T y>` up to rounding.
    pub fn adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>, LinopError> {
        self.check_len(y.len(), self.p)?;
        Ok(match &self.payload {
            Payload::Dense(a) => a.transpose() * y,
            Payload::Completion(data) => {
                let mut out = DVector::zeros(self.n * self.m);
                for (k, &idx) in data.indices.iter().enumerate() {
                    out[idx] = y[k];
                }
                out
            }
            Payload::Dct {
                indices,
                basis_n,
                basis_m,
            } => {
                let mut coeffs = DMatrix::zeros(self.n, self.m);
                {
                    let flat = coeffs.as_mut_slice();
                    for (k, &idx) in indices.iter().enumerate() {
                        flat[idx] = y[k];
                    }
                }
                vec_of(&(basis_n.transpose() * coeffs * basis_m))
            }
            Payload::BlockDiag { blocks, offsets } => {
                let mut out = DVector::zeros(self.n * self.m);
                for (i, blk) in blocks.iter().enumerate() {
                    if blk.nrows() == 0 {
                        continue;
                    }
                    let yi = y.rows(offsets[i], blk.nrows());
                    out.rows_mut(i * self.n, self.n)
                        .copy_from(&(blk.transpose() * yi));
                }
                out
            }
        })
    }

    /// Entry `A[k, flat]` without materializing `A`.
    fn dense_entry(&self, k: usize, flat: usize) -> f64 {
        match &self.payload {
            Payload::Dense(a) => a[(k, flat)],
            Payload::Completion(data) => {
                if data.indices[k] == flat {
                    1.0
                } else {
                    0.0
                }
            }
            Payload::Dct {
                indices,
                basis_n,
                basis_m,
            } => {
                let (kr, kc) = (indices[k] % self.n, indices[k] / self.n);
                let (r, c) = (flat % self.n, flat / self.n);
                basis_n[(kr, r)] * basis_m[(kc, c)]
            }
            Payload::BlockDiag { blocks, offsets } => {
                let c = flat / self.n;
                if k >= offsets[c] && k < offsets[c + 1] {
                    blocks[c][(k - offsets[c], flat % self.n)]
                } else {
                    0.0
                }
            }
        }
    }

    /// Materialize the full `p x nm` matrix. Intended for small instances
    /// and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.n * self.m, |k, flat| self.dense_entry(k, flat))
    }

    /// The `p x n` slice of `A` acting on column `i` of `X` (0-based).
    pub fn column_block(&self, i: usize) -> Result<DMatrix<f64>, LinopError> {
        if i >= self.m {
            return Err(LinopError::IndexOutOfRange {
                index: i,
                limit: self.m,
            });
        }
        Ok(match &self.payload {
            Payload::Dense(a) => a.columns(i * self.n, self.n).into_owned(),
            _ => DMatrix::from_fn(self.p, self.n, |k, r| self.dense_entry(k, i * self.n + r)),
        })
    }

    /// The `p x m` matrix formed by the columns of `A` touching row `j` of
    /// `X`, i.e. positions `j, j + n, ..., j + (m-1)n` (0-based).
    pub fn row_block(&self, j: usize) -> Result<DMatrix<f64>, LinopError> {
        if j >= self.n {
            return Err(LinopError::IndexOutOfRange {
                index: j,
                limit: self.n,
            });
        }
        Ok(DMatrix::from_fn(self.p, self.m, |k, i| {
            self.dense_entry(k, i * self.n + j)
        }))
    }

    /// `sum_i nu_i A_i P A_i^T`, the measurement Gram of the column prior
    /// `diag(nu) (x) P`. `P` must be `n x n`.
    pub fn gram_col(&self, psi: &DMatrix<f64>, nu: Option<&DVector<f64>>) -> DMatrix<f64> {
        assert_eq!(psi.nrows(), self.n);
        assert_eq!(psi.ncols(), self.n);
        let weight = |i: usize| nu.map_or(1.0, |v| v[i]);
        let mut out = DMatrix::zeros(self.p, self.p);
        match &self.payload {
            Payload::Completion(data) => {
                for i in 0..self.m {
                    let rows = &data.col_rows[i];
                    if rows.is_empty() {
                        continue;
                    }
                    let off = data.col_offsets[i];
                    let w = weight(i);
                    for (a, &ra) in rows.iter().enumerate() {
                        for (b, &rb) in rows.iter().enumerate() {
                            out[(off + a, off + b)] = w * psi[(ra, rb)];
                        }
                    }
                }
            }
            Payload::BlockDiag { blocks, offsets } => {
                for (i, blk) in blocks.iter().enumerate() {
                    if blk.nrows() == 0 {
                        continue;
                    }
                    let gram = blk * psi * blk.transpose() * weight(i);
                    out.view_mut((offsets[i], offsets[i]), (blk.nrows(), blk.nrows()))
                        .copy_from(&gram);
                }
            }
            Payload::Dense(a) => {
                for i in 0..self.m {
                    let blk = a.columns(i * self.n, self.n);
                    out += blk * psi * blk.transpose() * weight(i);
                }
            }
            Payload::Dct { .. } => {
                for i in 0..self.m {
                    let blk = self.column_block(i).expect("index in range");
                    out += &blk * psi * blk.transpose() * weight(i);
                }
            }
        }
        out
    }

    /// `sum_j B_j Q B_j^T`, the measurement Gram of the row prior
    /// `Q (x) I`. `Q` must be `m x m`.
    pub fn gram_row(&self, psi_r: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(psi_r.nrows(), self.m);
        assert_eq!(psi_r.ncols(), self.m);
        let mut out = DMatrix::zeros(self.p, self.p);
        match &self.payload {
            Payload::Completion(data) => {
                for group in &data.row_meas {
                    for &(k, ck) in group {
                        for &(l, cl) in group {
                            out[(k, l)] = psi_r[(ck, cl)];
                        }
                    }
                }
            }
            Payload::Dense(a) => {
                // Work around the strided column gather with an explicit copy.
                for j in 0..self.n {
                    let mut blk = DMatrix::zeros(self.p, self.m);
                    for i in 0..self.m {
                        blk.column_mut(i).copy_from(&a.column(i * self.n + j));
                    }
                    out += &blk * psi_r * blk.transpose();
                }
            }
            _ => {
                for j in 0..self.n {
                    let blk = self.row_block(j).expect("index in range");
                    out += &blk * psi_r * blk.transpose();
                }
            }
        }
        out
    }

    /// `sum_i nu_i (A_i P)^T M^-1 (A_i P)` where `M = gram_col(P, nu) + lambda I`.
    ///
    /// `chol`, when given, must factor exactly that `M`; kinds with
    /// block-structured `M` ignore it and solve per block.
    pub(crate) fn col_quad_sum(
        &self,
        psi: &DMatrix<f64>,
        nu: Option<&DVector<f64>>,
        lambda: f64,
        chol: Option<&la::SpdFactor>,
    ) -> Result<DMatrix<f64>, LinopError> {
        let weight = |i: usize| nu.map_or(1.0, |v| v[i]);
        let mut acc = DMatrix::zeros(self.n, self.n);
        match &self.payload {
            Payload::Completion(data) => {
                for i in 0..self.m {
                    let rows = &data.col_rows[i];
                    if rows.is_empty() {
                        continue;
                    }
                    let w = weight(i);
                    let mut block = la::gather(psi, rows, rows) * w;
                    for d in 0..rows.len() {
                        block[(d, d)] += lambda;
                    }
                    let factor =
                        la::factor_spd(&block, lambda).map_err(|_| LinopError::SingularGram)?;
                    // P[:, rows] M_i^-1 P[rows, :]
                    let wings = la::gather_cols(psi, rows);
                    let solved = factor.solve_matrix(&wings.transpose());
                    acc += w * &wings * solved;
                }
            }
            Payload::BlockDiag { blocks, .. } => {
                for (i, blk) in blocks.iter().enumerate() {
                    if blk.nrows() == 0 {
                        continue;
                    }
                    let w = weight(i);
                    let s = blk * psi;
                    let mut block = &s * blk.transpose() * w;
                    for d in 0..block.nrows() {
                        block[(d, d)] += lambda;
                    }
                    let factor =
                        la::factor_spd(&block, lambda).map_err(|_| LinopError::SingularGram)?;
                    acc += w * s.transpose() * factor.solve_matrix(&s);
                }
            }
            _ => {
                let owned;
                let factor = match chol {
                    Some(f) => f,
                    None => {
                        let mut gram = self.gram_col(psi, nu);
                        for d in 0..self.p {
                            gram[(d, d)] += lambda;
                        }
                        owned = la::factor_spd(&gram, lambda).map_err(|_| LinopError::SingularGram)?;
                        &owned
                    }
                };
                for i in 0..self.m {
                    let blk = self.column_block(i).expect("index in range");
                    let s = blk * psi;
                    acc += weight(i) * s.transpose() * factor.solve_matrix(&s);
                }
            }
        }
        la::symmetrize(&mut acc);
        Ok(acc)
    }

    /// `sum_j (B_j Q)^T M^-1 (B_j Q)` where `M = gram_row(Q) + lambda I`.
    pub(crate) fn row_quad_sum(
        &self,
        psi_r: &DMatrix<f64>,
        lambda: f64,
        chol: Option<&la::SpdFactor>,
    ) -> Result<DMatrix<f64>, LinopError> {
        let mut acc = DMatrix::zeros(self.m, self.m);
        match &self.payload {
            Payload::Completion(data) => {
                for group in &data.row_meas {
                    if group.is_empty() {
                        continue;
                    }
                    let cols: Vec<usize> = group.iter().map(|&(_, c)| c).collect();
                    let mut block = la::gather(psi_r, &cols, &cols);
                    for d in 0..cols.len() {
                        block[(d, d)] += lambda;
                    }
                    let factor =
                        la::factor_spd(&block, lambda).map_err(|_| LinopError::SingularGram)?;
                    let wings = la::gather_cols(psi_r, &cols);
                    let solved = factor.solve_matrix(&wings.transpose());
                    acc += &wings * solved;
                }
            }
            _ => {
                let owned;
                let factor = match chol {
                    Some(f) => f,
                    None => {
                        let mut gram = self.gram_row(psi_r);
                        for d in 0..self.p {
                            gram[(d, d)] += lambda;
                        }
                        owned = la::factor_spd(&gram, lambda).map_err(|_| LinopError::SingularGram)?;
                        &owned
                    }
                };
                for j in 0..self.n {
                    let blk = self.row_block(j).expect("index in range");
                    let s = blk * psi_r;
                    acc += s.transpose() * factor.solve_matrix(&s);
                }
            }
        }
        la::symmetrize(&mut acc);
        Ok(acc)
    }

    /// Minimum-Frobenius-norm feasible point `A^T (A A^T)^-1 b`.
    pub fn min_frobenius_solution(&self, b: &DVector<f64>) -> Result<DVector<f64>, LinopError> {
        self.check_len(b.len(), self.p)?;
        match &self.payload {
            // A A^T = I for entry sampling and orthonormal rows.
            Payload::Completion(_) | Payload::Dct { .. } => self.adjoint(b),
            _ => {
                let gram = self.gram_col(&DMatrix::identity(self.n, self.n), None);
                let scale = gram.trace().max(f64::MIN_POSITIVE) / self.p as f64;
                let factor = la::factor_spd(&gram, 1e-12 * scale)
                    .map_err(|_| LinopError::SingularGram)?;
                self.adjoint(&factor.solve_vector(b))
            }
        }
    }

    /// Orthogonal projection of `v` onto the nullspace of `A`.
    pub fn project_onto_nullspace(&self, v: &DVector<f64>) -> Result<DVector<f64>, LinopError> {
        self.check_len(v.len(), self.n * self.m)?;
        let av = self.apply(v)?;
        Ok(v - self.min_frobenius_solution(&av)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.kronecker(b)
    }

    fn random_operator(kind: EnsembleKind, n: usize, m: usize, p: usize, s: u64) -> AffineOperator {
        AffineOperator::generate(&EnsembleSpec::new(kind, n, m, p, s)).unwrap()
    }

    const ALL_KINDS: [EnsembleKind; 5] = [
        EnsembleKind::Gaussian,
        EnsembleKind::Correlated,
        EnsembleKind::Completion,
        EnsembleKind::DctSubsampled,
        EnsembleKind::BlockDiagonal,
    ];

    #[test]
    fn dense_identity_apply_is_identity() {
        let nm = 6;
        let op = AffineOperator::dense(2, 3, DMatrix::identity(nm, nm)).unwrap();
        let x = seed::gaussian_vector(&mut seed::rng(1), nm);
        assert_eq!(op.apply(&x).unwrap(), x);
    }

    #[test]
    fn completion_apply_selects_and_adjoint_scatters() {
        let op = AffineOperator::completion(3, 3, vec![7, 2, 4]).unwrap();
        let x = DVector::from_fn(9, |i, _| i as f64);
        let b = op.apply(&x).unwrap();
        // Indices are sorted internally.
        assert_eq!(b.as_slice(), &[2.0, 4.0, 7.0]);
        let back = op.adjoint(&b).unwrap();
        for i in 0..9 {
            let expected = if [2, 4, 7].contains(&i) { i as f64 } else { 0.0 };
            assert_eq!(back[i], expected);
        }
    }

    #[test]
    fn completion_full_observation_is_identity() {
        let (n, m) = (3, 4);
        let op = random_operator(EnsembleKind::Completion, n, m, n * m, 5);
        let x = seed::gaussian_vector(&mut seed::rng(2), n * m);
        assert_eq!(op.apply(&x).unwrap(), x);
    }

    /// 1-D DCT-II straight from the cosine definition.
    fn naive_dct_1d(v: &[f64]) -> Vec<f64> {
        let k = v.len();
        (0..k)
            .map(|i| {
                let scale = if i == 0 {
                    (1.0 / k as f64).sqrt()
                } else {
                    (2.0 / k as f64).sqrt()
                };
                scale
                    * v.iter()
                        .enumerate()
                        .map(|(j, &x)| {
                            x * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * i as f64
                                / (2.0 * k as f64))
                                .cos()
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    /// Separable 2-D oracle: 1-D DCT down each column, then along each row.
    fn naive_dct_2d(x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = x.shape();
        let mut cols = DMatrix::zeros(n, m);
        for c in 0..m {
            let v: Vec<f64> = x.column(c).iter().copied().collect();
            cols.column_mut(c)
                .copy_from(&DVector::from_vec(naive_dct_1d(&v)));
        }
        let mut out = DMatrix::zeros(n, m);
        for r in 0..n {
            let v: Vec<f64> = cols.row(r).iter().copied().collect();
            out.row_mut(r)
                .copy_from(&nalgebra::RowDVector::from_vec(naive_dct_1d(&v)));
        }
        out
    }

    #[test]
    fn full_dct_matches_separable_oracle_and_inverts() {
        let (n, m) = (4, 5);
        let op = AffineOperator::dct_subsampled(n, m, (0..n * m).collect()).unwrap();
        let xm = seed::gaussian_matrix(&mut seed::rng(3), n, m);
        let b = op.apply(&vec_of(&xm)).unwrap();
        let oracle = naive_dct_2d(&xm);
        for (k, &idx) in op.sampled_indices().unwrap().iter().enumerate() {
            assert_relative_eq!(b[k], oracle.as_slice()[idx], epsilon = 1e-12);
        }
        let roundtrip = op.adjoint(&b).unwrap();
        assert_relative_eq!(roundtrip, vec_of(&xm), epsilon = 1e-12);
    }

    #[test]
    fn adjoint_matches_dense_transpose() {
        for (t, kind) in ALL_KINDS.into_iter().enumerate() {
            let op = random_operator(kind, 3, 3, 6, 40 + t as u64);
            let y = seed::gaussian_vector(&mut seed::rng(7 + t as u64), op.p());
            let dense = op.to_dense();
            let expected = dense.transpose() * &y;
            assert_relative_eq!(op.adjoint(&y).unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn dense_zero_adjoint_is_zero() {
        let op = AffineOperator::dense(2, 2, DMatrix::zeros(3, 4)).unwrap();
        let y = DVector::zeros(3);
        assert_eq!(op.adjoint(&y).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn column_block_of_dense_is_column_slice() {
        let a = seed::gaussian_matrix(&mut seed::rng(11), 5, 12);
        let op = AffineOperator::dense(3, 4, a.clone()).unwrap();
        for i in 0..4 {
            assert_eq!(op.column_block(i).unwrap(), a.columns(i * 3, 3).into_owned());
        }
        assert!(op.column_block(4).is_err());
    }

    #[test]
    fn completion_column_block_rows_are_unit_vectors() {
        let op = AffineOperator::completion(4, 3, vec![0, 2, 5, 9]).unwrap();
        // Column 1 holds flat indices 4..8, so only index 5 lands there.
        let blk = op.column_block(1).unwrap();
        let ones: Vec<(usize, usize)> = (0..blk.nrows())
            .flat_map(|k| (0..blk.ncols()).map(move |r| (k, r)))
            .filter(|&(k, r)| blk[(k, r)] != 0.0)
            .collect();
        assert_eq!(ones, vec![(2, 1)]);
    }

    #[test]
    fn column_blocks_assemble_col_kronecker_gram() {
        for (t, kind) in ALL_KINDS.into_iter().enumerate() {
            let (n, m, p) = (4, 3, 7);
            let op = random_operator(kind, n, m, p, 100 + t as u64);
            let psi = {
                let g = seed::gaussian_matrix(&mut seed::rng(13), n, n);
                &g * g.transpose()
            };
            let dense = op.to_dense();
            let expected = &dense * kron(&DMatrix::identity(m, m), &psi) * dense.transpose();
            let mut by_blocks = DMatrix::zeros(p, p);
            for i in 0..m {
                let blk = op.column_block(i).unwrap();
                by_blocks += &blk * &psi * blk.transpose();
            }
            assert_relative_eq!(by_blocks, expected, epsilon = 1e-10);
            assert_relative_eq!(op.gram_col(&psi, None), expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn row_blocks_assemble_row_kronecker_gram() {
        for (t, kind) in ALL_KINDS.into_iter().enumerate() {
            let (n, m, p) = (3, 4, 6);
            let op = random_operator(kind, n, m, p, 200 + t as u64);
            let psi_r = {
                let g = seed::gaussian_matrix(&mut seed::rng(17), m, m);
                &g * g.transpose()
            };
            let dense = op.to_dense();
            let expected = &dense * kron(&psi_r, &DMatrix::identity(n, n)) * dense.transpose();
            let mut by_blocks = DMatrix::zeros(p, p);
            for j in 0..n {
                let blk = op.row_block(j).unwrap();
                by_blocks += &blk * &psi_r * blk.transpose();
            }
            assert_relative_eq!(by_blocks, expected, epsilon = 1e-10);
            assert_relative_eq!(op.gram_row(&psi_r), expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn row_block_with_single_row_is_whole_operator() {
        let op = random_operator(EnsembleKind::Gaussian, 1, 5, 3, 23);
        assert_eq!(op.row_block(0).unwrap(), op.to_dense());
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in ALL_KINDS {
            let spec = EnsembleSpec::new(kind, 4, 5, 9, 77);
            let a = AffineOperator::generate(&spec).unwrap().to_dense();
            let b = AffineOperator::generate(&spec).unwrap().to_dense();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn correlated_operator_matches_weighted_outer_product_construction() {
        // Independent rebuild of sum_i i^(-q) u_i v_i^T from the same stream.
        let spec = EnsembleSpec {
            corr_decay: 0.5,
            ..EnsembleSpec::new(EnsembleKind::Correlated, 4, 5, 7, 2024)
        };
        let op = AffineOperator::generate(&spec).unwrap();
        let mut rng = seed::rng(spec.seed);
        let u = seed::gaussian_matrix(&mut rng, spec.p, spec.p);
        let v = seed::gaussian_matrix(&mut rng, spec.n * spec.m, spec.p);
        let mut expected = DMatrix::zeros(spec.p, spec.n * spec.m);
        for i in 0..spec.p {
            let w = ((i + 1) as f64).powf(-0.5);
            expected += w * u.column(i) * v.column(i).transpose();
        }
        assert_relative_eq!(op.to_dense(), expected, epsilon = 1e-10);
    }

    #[test]
    fn correlated_spectrum_decays_and_steepens_with_the_exponent() {
        // The weighted-outer-product sum is far worse conditioned than an
        // iid Gaussian matrix of the same shape, and raising the decay
        // exponent steepens the spectrum. Thresholds frozen from the
        // materialized-spectrum oracle over these seeds.
        let p = 50;
        for s in 0..10 {
            let gauss = random_operator(EnsembleKind::Gaussian, 16, 16, p, 900 + s);
            let sv_gauss = gauss.to_dense().svd(false, false).singular_values;
            let corr = random_operator(EnsembleKind::Correlated, 16, 16, p, 900 + s);
            let sv_corr = corr.to_dense().svd(false, false).singular_values;
            assert!(
                sv_corr[0] / sv_corr[p - 1] > 10.0 * sv_gauss[0] / sv_gauss[p - 1],
                "seed {s}: correlated spectrum not markedly worse conditioned"
            );
            // Bulk decay between the 5th and 20th singular values sits near
            // the ideal 2x of the i^(-1/2) profile.
            let bulk = sv_corr[4] / sv_corr[19];
            assert!(
                bulk > 1.5 && bulk < 4.0,
                "seed {s}: bulk decay {bulk} outside the frozen band"
            );
            let steep = {
                let mut spec = EnsembleSpec::new(EnsembleKind::Correlated, 16, 16, p, 900 + s);
                spec.corr_decay = 1.0;
                AffineOperator::generate(&spec).unwrap()
            };
            let sv_steep = steep.to_dense().svd(false, false).singular_values;
            assert!(
                sv_steep[4] / sv_steep[19] > bulk,
                "seed {s}: exponent 1.0 did not steepen the bulk decay"
            );
        }
    }

    #[test]
    fn adjoint_consistency_over_random_instances() {
        let mut rng = seed::rng(99);
        for t in 0..100 {
            let kind = ALL_KINDS[t % ALL_KINDS.len()];
            let n = 2 + (t % 5);
            let m = 2 + (t % 4);
            let p_max = if matches!(kind, EnsembleKind::Completion | EnsembleKind::DctSubsampled)
            {
                n * m
            } else {
                n * m + 3
            };
            let p = 1 + (t * 7) % p_max;
            let op = random_operator(kind, n, m, p, 1000 + t as u64);
            let x = seed::gaussian_vector(&mut rng, n * m);
            let y = seed::gaussian_vector(&mut rng, p);
            let lhs = op.apply(&x).unwrap().dot(&y);
            let rhs = x.dot(&op.adjoint(&y).unwrap());
            assert!(
                (lhs - rhs).abs() <= 1e-10 * x.norm() * y.norm(),
                "kind {kind:?}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn blocks_reassemble_dense_matrix_exactly() {
        for (t, kind) in ALL_KINDS.into_iter().enumerate() {
            let (n, m, p) = (5, 4, 11);
            let op = random_operator(kind, n, m, p, 400 + t as u64);
            let dense = op.to_dense();
            for i in 0..m {
                let blk = op.column_block(i).unwrap();
                assert_eq!(blk, dense.columns(i * n, n).into_owned(), "{kind:?} col {i}");
            }
            for j in 0..n {
                let blk = op.row_block(j).unwrap();
                for i in 0..m {
                    assert_eq!(
                        blk.column(i),
                        dense.column(i * n + j),
                        "{kind:?} row {j} col {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn min_frobenius_solution_matches_pseudoinverse() {
        for (t, kind) in ALL_KINDS.into_iter().enumerate() {
            let (n, m, p) = (4, 4, 9);
            let op = random_operator(kind, n, m, p, 500 + t as u64);
            let b = seed::gaussian_vector(&mut seed::rng(600 + t as u64), p);
            let x = op.min_frobenius_solution(&b).unwrap();
            let residual = (op.apply(&x).unwrap() - &b).norm();
            assert!(residual <= 1e-8 * b.norm(), "{kind:?}: residual {residual}");
            let pinv = op.to_dense().pseudo_inverse(1e-12).unwrap();
            assert_relative_eq!(x, &pinv * &b, epsilon = 1e-8);
        }
    }

    #[test]
    fn nullspace_projection_annihilates() {
        for (t, kind) in ALL_KINDS.into_iter().enumerate() {
            let (n, m, p) = (4, 4, 9);
            let op = random_operator(kind, n, m, p, 700 + t as u64);
            let v = seed::gaussian_vector(&mut seed::rng(800 + t as u64), n * m);
            let proj = op.project_onto_nullspace(&v).unwrap();
            assert!(op.apply(&proj).unwrap().norm() <= 1e-8 * v.norm());
        }
    }

    #[test]
    fn oversampling_request_is_rejected() {
        let spec = EnsembleSpec::new(EnsembleKind::Completion, 3, 3, 10, 1);
        assert!(AffineOperator::generate(&spec).is_err());
        let spec = EnsembleSpec::new(EnsembleKind::DctSubsampled, 3, 3, 10, 1);
        assert!(AffineOperator::generate(&spec).is_err());
    }

    #[test]
    fn duplicate_indices_rejected() {
        assert!(AffineOperator::completion(3, 3, vec![1, 1, 2]).is_err());
    }

    #[test]
    fn operators_and_reports_cross_thread_boundaries() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<AffineOperator>();
        assert_send_sync::<crate::solver::RecoveryReport>();
        assert_send_sync::<crate::solver::BarmState>();
    }

    proptest::proptest! {
        #[test]
        fn vec_unvec_round_trip(n in 1usize..6, m in 1usize..6, s in 0u64..1000) {
            let x = seed::gaussian_matrix(&mut seed::rng(s), n, m);
            proptest::prop_assert_eq!(unvec(&vec_of(&x), n, m), x);
        }

        #[test]
        fn generated_operators_respect_adjoint_pairing(s in 0u64..500) {
            let kind = ALL_KINDS[(s % 5) as usize];
            let n = 2 + (s % 4) as usize;
            let m = 2 + (s % 3) as usize;
            let p = 1 + (s as usize % (n * m));
            let op = random_operator(kind, n, m, p, s);
            let x = seed::gaussian_vector(&mut seed::rng(s + 1), n * m);
            let y = seed::gaussian_vector(&mut seed::rng(s + 2), p);
            let lhs = op.apply(&x).unwrap().dot(&y);
            let rhs = x.dot(&op.adjoint(&y).unwrap());
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-10 * x.norm() * y.norm());
        }
    }
}
