//! File formats: matrices, observation vectors, operator descriptors,
//! JSONL trial records, and the CSV outputs.
//!
//! Matrix files carry a `# n m` header line followed by `n` comma-separated
//! rows, printed with 17 significant digits so that reading back is
//! bit-exact. Operator descriptors are JSON with row-major flat indices;
//! internally everything is column-major.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{CellSummary, TrialRecord};
use crate::landscape::PenaltyTrace;
use crate::linops::{AffineOperator, EnsembleKind, EnsembleSpec, LinopError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Linop(#[from] LinopError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// 17 significant digits: enough for a bit-exact f64 round trip.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a matrix in the `# n m` header format.
pub fn write_matrix(path: &Path, x: &DMatrix<f64>) -> Result<(), IoError> {
    let mut out = String::new();
    writeln!(out, "# {} {}", x.nrows(), x.ncols()).expect("string write");
    for r in 0..x.nrows() {
        let row: Vec<String> = (0..x.ncols()).map(|c| fmt_f64(x[(r, c)])).collect();
        writeln!(out, "{}", row.join(",")).expect("string write");
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header.map_err(io_err(path))?;
    let dims: Vec<&str> = header
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 1, "expected a '# n m' header"))?
        .split_whitespace()
        .collect();
    if dims.len() != 2 {
        return Err(parse_err(path, 1, "expected exactly two dimensions"));
    }
    let n: usize = dims[0]
        .parse()
        .map_err(|_| parse_err(path, 1, format!("bad row count {:?}", dims[0])))?;
    let m: usize = dims[1]
        .parse()
        .map_err(|_| parse_err(path, 1, format!("bad column count {:?}", dims[1])))?;
    let mut x = DMatrix::zeros(n, m);
    let mut row = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if row >= n {
            return Err(parse_err(path, idx + 1, format!("more than {n} data rows")));
        }
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != m {
            return Err(parse_err(
                path,
                idx + 1,
                format!("expected {m} values, found {}", values.len()),
            ));
        }
        for (c, v) in values.iter().enumerate() {
            x[(row, c)] = v
                .trim()
                .parse()
                .map_err(|_| parse_err(path, idx + 1, format!("bad number {v:?}")))?;
        }
        row += 1;
    }
    if row != n {
        return Err(parse_err(path, row + 1, format!("expected {n} rows, found {row}")));
    }
    Ok(x)
}

/// Write an observation vector, one value per line.
pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<(), IoError> {
    let mut out = String::new();
    for x in v.iter() {
        writeln!(out, "{}", fmt_f64(*x)).expect("string write");
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Read an observation vector, one value per line.
pub fn read_vector(path: &Path) -> Result<DVector<f64>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        values.push(
            t.parse()
                .map_err(|_| parse_err(path, idx + 1, format!("bad number {t:?}")))?,
        );
    }
    Ok(DVector::from_vec(values))
}

/// JSON description of an operator: enough to rebuild it deterministically.
/// `indices` are row-major flat positions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDescriptor {
    pub kind: EnsembleKind,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corr_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

fn row_major_to_col_major(indices: &[usize], n: usize, m: usize) -> Vec<usize> {
    indices
        .iter()
        .map(|&rm| {
            let r = rm / m;
            let c = rm % m;
            c * n + r
        })
        .collect()
}

fn col_major_to_row_major(indices: &[usize], n: usize, m: usize) -> Vec<usize> {
    let mut out: Vec<usize> = indices
        .iter()
        .map(|&cm| {
            let c = cm / n;
            let r = cm % n;
            r * m + c
        })
        .collect();
    out.sort_unstable();
    out
}

impl OperatorDescriptor {
    pub fn build(&self) -> Result<AffineOperator, LinopError> {
        match (&self.indices, self.kind) {
            (Some(idx), EnsembleKind::Completion) => {
                AffineOperator::completion(self.n, self.m, row_major_to_col_major(idx, self.n, self.m))
            }
            (Some(idx), EnsembleKind::DctSubsampled) => AffineOperator::dct_subsampled(
                self.n,
                self.m,
                row_major_to_col_major(idx, self.n, self.m),
            ),
            (Some(_), other) => Err(LinopError::InvalidSpec(format!(
                "explicit indices are not meaningful for the {other:?} kind"
            ))),
            (None, kind) => {
                let seed = self.seed.ok_or_else(|| {
                    LinopError::InvalidSpec("a seed is required without explicit indices".into())
                })?;
                let mut spec = EnsembleSpec::new(kind, self.n, self.m, self.p, seed);
                if let Some(d) = self.corr_decay {
                    spec.corr_decay = d;
                }
                AffineOperator::generate(&spec)
            }
        }
    }

    /// Descriptor for an operator with sampled indices (completion or DCT).
    pub fn from_sampled(op: &AffineOperator, seed: Option<u64>) -> Option<Self> {
        let indices = op.sampled_indices()?;
        let kind = match op.kind() {
            crate::linops::OperatorKind::Completion => EnsembleKind::Completion,
            crate::linops::OperatorKind::DctSubsampled => EnsembleKind::DctSubsampled,
            _ => return None,
        };
        Some(Self {
            kind,
            n: op.n(),
            m: op.m(),
            p: op.p(),
            seed,
            corr_decay: None,
            indices: Some(col_major_to_row_major(indices, op.n(), op.m())),
        })
    }
}

/// Read an operator from a `.json` descriptor or a dense `.csv` with a
/// `# p n m` header.
pub fn read_operator(path: &Path) -> Result<AffineOperator, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let desc: OperatorDescriptor = serde_json::from_str(&text).map_err(|e| {
                parse_err(path, e.line(), format!("bad operator descriptor: {e}"))
            })?;
            Ok(desc.build()?)
        }
        Some("csv") => read_operator_csv(path),
        _ => Err(IoError::Format {
            path: path.to_path_buf(),
            msg: "expected a .json descriptor or a .csv dense operator".into(),
        }),
    }
}

/// Write an operator descriptor as JSON.
pub fn write_descriptor(path: &Path, desc: &OperatorDescriptor) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(desc).expect("descriptor serializes");
    fs::write(path, text).map_err(io_err(path))
}

fn read_operator_csv(path: &Path) -> Result<AffineOperator, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header.map_err(io_err(path))?;
    let dims: Vec<&str> = header
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 1, "expected a '# p n m' header"))?
        .split_whitespace()
        .collect();
    if dims.len() != 3 {
        return Err(parse_err(path, 1, "expected '# p n m'"));
    }
    let parse_dim = |s: &str| -> Result<usize, IoError> {
        s.parse()
            .map_err(|_| parse_err(path, 1, format!("bad dimension {s:?}")))
    };
    let (p, n, m) = (parse_dim(dims[0])?, parse_dim(dims[1])?, parse_dim(dims[2])?);
    let mut a = DMatrix::zeros(p, n * m);
    let mut row = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if row >= p {
            return Err(parse_err(path, idx + 1, format!("more than {p} rows")));
        }
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != n * m {
            return Err(parse_err(
                path,
                idx + 1,
                format!("expected {} values, found {}", n * m, values.len()),
            ));
        }
        for (c, v) in values.iter().enumerate() {
            a[(row, c)] = v
                .trim()
                .parse()
                .map_err(|_| parse_err(path, idx + 1, format!("bad number {v:?}")))?;
        }
        row += 1;
    }
    if row != p {
        return Err(parse_err(path, row + 1, format!("expected {p} rows, found {row}")));
    }
    AffineOperator::dense(n, m, a).map_err(IoError::from)
}

/// Append records to a JSONL file, one per line.
pub fn append_records_jsonl(path: &Path, records: &[TrialRecord]) -> Result<(), IoError> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut out = String::new();
    for rec in records {
        writeln!(out, "{}", serde_json::to_string(rec).expect("record serializes"))
            .expect("string write");
    }
    file.write_all(out.as_bytes()).map_err(io_err(path))
}

/// Read back a JSONL record file.
pub fn read_records_jsonl(path: &Path) -> Result<Vec<TrialRecord>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| parse_err(path, idx + 1, format!("bad record: {e}")))?,
        );
    }
    Ok(records)
}

fn kind_name(kind: EnsembleKind) -> &'static str {
    match kind {
        EnsembleKind::Gaussian => "gaussian",
        EnsembleKind::Correlated => "correlated",
        EnsembleKind::Completion => "completion",
        EnsembleKind::DctSubsampled => "dct-subsampled",
        EnsembleKind::BlockDiagonal => "block-diagonal",
    }
}

/// Per-cell summary CSV.
pub fn write_summary_csv(path: &Path, cells: &[CellSummary]) -> Result<(), IoError> {
    let mut out = String::from("n,m,r,p,kind,algo,fos,fors,mean_rel,mean_iters\n");
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.n,
            c.m,
            c.r,
            c.p,
            kind_name(c.kind),
            c.algorithm.name(),
            c.fos,
            c.fors,
            c.mean_rel,
            c.mean_iters
        )
        .expect("string write");
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Landscape trace CSV: `eta,nuclear[,logdet_gamma_<g>...],barm` with a
/// header comment recording the instance seed and direction mode.
pub fn write_trace_csv(path: &Path, trace: &PenaltyTrace) -> Result<(), IoError> {
    let mut out = String::new();
    let seed_text = trace
        .metadata
        .seed
        .map_or_else(|| "none".to_string(), |s| s.to_string());
    writeln!(
        out,
        "# seed={} v_mode={} lambda={:e}",
        seed_text, trace.metadata.v_mode, trace.metadata.lambda
    )
    .expect("string write");
    let mut header = String::from("eta,nuclear");
    for (g, _) in &trace.logdet {
        write!(header, ",logdet_gamma_{g:e}").expect("string write");
    }
    header.push_str(",barm");
    writeln!(out, "{header}").expect("string write");
    for i in 0..trace.eta_grid.len() {
        write!(out, "{},{}", trace.eta_grid[i], trace.nuclear[i]).expect("string write");
        for (_, values) in &trace.logdet {
            write!(out, ",{}", values[i]).expect("string write");
        }
        writeln!(out, ",{}", trace.barm[i]).expect("string write");
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Stable file stem for an archived estimate.
pub fn xhat_stem(rec: &TrialRecord) -> String {
    format!(
        "{}x{}_r{}_p{}_{}_t{}_{}",
        rec.n,
        rec.m,
        rec.r,
        rec.p,
        kind_name(rec.kind),
        rec.trial_index,
        rec.algorithm.name()
    )
}
