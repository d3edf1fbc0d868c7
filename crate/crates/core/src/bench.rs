//! Ground-truth generation, recovery metrics and the sweep runner.
//!
//! A sweep is described declaratively by an [`ExperimentSpec`]; every
//! (cell, trial) derives its own seed from the master seed through
//! [`crate::seed::mix`], so all algorithms inside a trial see the same
//! instance and the record set is a pure function of the spec, independent
//! of execution order and parallelism.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, Irls0Config, NucConfig};
use crate::linops::{vec_of, AffineOperator, EnsembleKind, EnsembleSpec, LinopError};
use crate::seed;
use crate::solver::{self, BarmConfig, SolveError, SolveMode};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Algorithms the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Barm,
    Nuclear,
    Irls0,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Barm => "barm",
            Algo::Nuclear => "nuclear",
            Algo::Irls0 => "irls0",
        }
    }
}

fn default_corr_decay() -> f64 {
    0.5
}

fn default_lambda_barm() -> f64 {
    1e-10
}

fn default_barm_mode() -> SolveMode {
    SolveMode::Symmetric
}

/// Declarative description of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: EnsembleKind,
    pub n: usize,
    pub m: usize,
    /// One cell per rank.
    pub ranks: Vec<usize>,
    /// Measurement count; exclusive with `observed_fraction`.
    #[serde(default)]
    pub p: Option<usize>,
    /// Fraction of observed entries (completion only); `p = ceil(nm * f)`.
    #[serde(default)]
    pub observed_fraction: Option<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub algorithms: Vec<Algo>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Singular-value decay exponent of the ground truth (0 = none).
    #[serde(default)]
    pub decay_exponent: f64,
    #[serde(default = "default_corr_decay")]
    pub corr_decay: f64,
    #[serde(default = "default_lambda_barm")]
    pub lambda_barm: f64,
    /// Regularization for the nuclear baseline on noisy data; defaults to
    /// `lambda_barm`. Noiseless sweeps always use the constrained mode.
    #[serde(default)]
    pub lambda_nuclear: Option<f64>,
    #[serde(default = "default_barm_mode")]
    pub barm_mode: SolveMode,
    /// Ask the caller (the CLI) to archive every estimate.
    #[serde(default)]
    pub store_xhat: bool,
}

impl ExperimentSpec {
    pub fn new(
        kind: EnsembleKind,
        n: usize,
        m: usize,
        ranks: Vec<usize>,
        p: usize,
        trials: usize,
        master_seed: u64,
        algorithms: Vec<Algo>,
    ) -> Self {
        Self {
            kind,
            n,
            m,
            ranks,
            p: Some(p),
            observed_fraction: None,
            trials,
            master_seed,
            algorithms,
            noise_sigma: 0.0,
            decay_exponent: 0.0,
            corr_decay: default_corr_decay(),
            lambda_barm: default_lambda_barm(),
            lambda_nuclear: None,
            barm_mode: default_barm_mode(),
            store_xhat: false,
        }
    }

    pub fn resolve_p(&self) -> Result<usize, BenchError> {
        match (self.p, self.observed_fraction) {
            (Some(p), None) => Ok(p),
            (None, Some(f)) => {
                if self.kind != EnsembleKind::Completion {
                    return Err(BenchError::InvalidSpec(
                        "observed_fraction applies to the completion kind only".into(),
                    ));
                }
                if !(f > 0.0 && f <= 1.0) {
                    return Err(BenchError::InvalidSpec(
                        "observed_fraction must lie in (0, 1]".into(),
                    ));
                }
                Ok(((self.n * self.m) as f64 * f).ceil() as usize)
            }
            (Some(_), Some(_)) => Err(BenchError::InvalidSpec(
                "give either p or observed_fraction, not both".into(),
            )),
            (None, None) => Err(BenchError::InvalidSpec(
                "one of p or observed_fraction is required".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials == 0 {
            return Err(BenchError::InvalidSpec("trials must be at least 1".into()));
        }
        if self.ranks.is_empty() {
            return Err(BenchError::InvalidSpec("rank list is empty".into()));
        }
        if let Some(&bad) = self.ranks.iter().find(|&&r| r == 0 || r > self.n.min(self.m)) {
            return Err(BenchError::InvalidSpec(format!(
                "rank {bad} outside 1..={}",
                self.n.min(self.m)
            )));
        }
        if self.algorithms.is_empty() {
            return Err(BenchError::InvalidSpec("algorithm list is empty".into()));
        }
        if self.noise_sigma < 0.0 || self.decay_exponent < 0.0 {
            return Err(BenchError::InvalidSpec(
                "noise_sigma and decay_exponent must be nonnegative".into(),
            ));
        }
        let p = self.resolve_p()?;
        if matches!(
            self.kind,
            EnsembleKind::Completion | EnsembleKind::DctSubsampled
        ) && p > self.n * self.m
        {
            return Err(BenchError::InvalidSpec(format!(
                "p = {p} exceeds the {} available positions",
                self.n * self.m
            )));
        }
        Ok(())
    }
}

/// One (instance, algorithm) outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
    pub kind: EnsembleKind,
    pub trial_index: usize,
    pub derived_seed: u64,
    pub algorithm: Algo,
    pub rel: f64,
    pub fos_success: bool,
    pub fors_success: bool,
    pub est_rank: usize,
    pub iterations: usize,
    pub wall_milliseconds: f64,
    pub residual: f64,
}

/// Identity of a record inside a sweep; used for resume and archives.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RecordKey {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
    pub kind: EnsembleKind,
    pub trial_index: usize,
    pub algorithm: Algo,
}

impl TrialRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            n: self.n,
            m: self.m,
            r: self.r,
            p: self.p,
            kind: self.kind,
            trial_index: self.trial_index,
            algorithm: self.algorithm,
        }
    }
}

/// Record plus the estimate it was scored on.
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub xhat: DMatrix<f64>,
}

/// Rank-r ground truth as a product of iid Gaussian factors; a positive
/// `decay_exponent` q rescales the i-th singular value by `i^(-q)`.
pub fn gen_lowrank(
    n: usize,
    m: usize,
    r: usize,
    seed_value: u64,
    decay_exponent: f64,
) -> Result<DMatrix<f64>, BenchError> {
    if r > n.min(m) {
        return Err(BenchError::InvalidSpec(format!(
            "rank {r} exceeds min({n}, {m})"
        )));
    }
    let mut rng = seed::rng(seed_value);
    let ml = seed::gaussian_matrix(&mut rng, n, r);
    let mr = seed::gaussian_matrix(&mut rng, r, m);
    let x = ml * mr;
    if decay_exponent == 0.0 || r == 0 {
        return Ok(x);
    }
    let svd = x.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let scaled = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values
            .iter()
            .enumerate()
            .map(|(i, s)| s * ((i + 1) as f64).powf(-decay_exponent)),
    );
    Ok(&u * DMatrix::from_diagonal(&scaled) * &v_t)
}

/// Relative Frobenius error `||X0 - Xhat||_F / ||X0||_F`.
pub fn rel(x0: &DMatrix<f64>, xhat: &DMatrix<f64>) -> Result<f64, BenchError> {
    if x0.shape() != xhat.shape() {
        return Err(BenchError::InvalidSpec(format!(
            "shape mismatch: {:?} vs {:?}",
            x0.shape(),
            xhat.shape()
        )));
    }
    let denom = x0.norm();
    if denom == 0.0 {
        return Err(BenchError::InvalidSpec(
            "relative error undefined for a zero ground truth".into(),
        ));
    }
    Ok((x0 - xhat).norm() / denom)
}

/// Fraction of records with `rel < 1e-3`.
pub fn fos(records: &[TrialRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.fos_success).count() as f64 / records.len() as f64
}

/// Fraction of records passing the rank-success criterion.
pub fn fors_fraction(records: &[TrialRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.fors_success).count() as f64 / records.len() as f64
}

/// Rank success: feasible to `1e-6 ||b||` with spectral gap
/// `s_r / s_{r+1} > 1e3` at the target rank.
pub fn fors(
    xhat: &DMatrix<f64>,
    r: usize,
    op: &AffineOperator,
    b: &DVector<f64>,
) -> Result<bool, BenchError> {
    if r == 0 {
        return Err(BenchError::InvalidSpec("target rank must be positive".into()));
    }
    let resid = (op.apply(&vec_of(xhat))? - b).norm();
    let scale = b.norm();
    let feasible = resid <= 1e-6 * if scale > 0.0 { scale } else { 1.0 };
    if !feasible {
        return Ok(false);
    }
    let svals = xhat.clone().svd(false, false).singular_values;
    if r > svals.len() {
        return Ok(false);
    }
    let ratio = if r == svals.len() {
        if svals[r - 1] > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        svals[r - 1] / svals[r]
    };
    Ok(ratio > 1e3)
}

/// Parameter count of an `n x m` rank-`r` matrix.
pub fn dof(n: usize, m: usize, r: usize) -> usize {
    r * (n + m) - r * r
}

/// Degrees-of-freedom ratio `dof / p`; values near one are hardest.
pub fn fr(r: usize, n: usize, m: usize, p: usize) -> f64 {
    assert!(p > 0, "p must be positive");
    dof(n, m, r) as f64 / p as f64
}

/// `X0 + sigma * E` with iid standard normal `E`, deterministic per seed.
pub fn add_noise(x0: &DMatrix<f64>, sigma: f64, seed_value: u64) -> DMatrix<f64> {
    if sigma == 0.0 {
        return x0.clone();
    }
    let noise = seed::gaussian_matrix(&mut seed::rng(seed_value), x0.nrows(), x0.ncols());
    x0 + noise * sigma
}

/// One planned trial; all algorithms share its instance.
#[derive(Clone, Copy, Debug)]
pub struct TrialTask {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
    pub kind: EnsembleKind,
    pub trial_index: usize,
    pub seed: u64,
}

/// Deterministic trial enumeration: ranks in order, trials within a rank.
pub fn plan(spec: &ExperimentSpec) -> Result<Vec<TrialTask>, BenchError> {
    spec.validate()?;
    let p = spec.resolve_p()?;
    let mut tasks = Vec::with_capacity(spec.ranks.len() * spec.trials);
    for &r in &spec.ranks {
        for trial_index in 0..spec.trials {
            let mut s = spec.master_seed;
            for field in [
                spec.n as u64,
                spec.m as u64,
                r as u64,
                p as u64,
                spec.kind.code(),
                trial_index as u64,
            ] {
                s = seed::mix(s, field);
            }
            tasks.push(TrialTask {
                n: spec.n,
                m: spec.m,
                r,
                p,
                kind: spec.kind,
                trial_index,
                seed: s,
            });
        }
    }
    Ok(tasks)
}

/// Ground truth with a usable spectrum: resamples (bounded) while the target
/// singular value is too small for the success thresholds to be meaningful.
fn gen_ground_truth(task: &TrialTask, decay_exponent: f64) -> Result<DMatrix<f64>, BenchError> {
    let base = seed::mix(task.seed, 0x7830);
    let mut x = gen_lowrank(task.n, task.m, task.r, base, decay_exponent)?;
    for attempt in 1..=64 {
        let svals = x.clone().svd(false, false).singular_values;
        let sr = svals[task.r - 1];
        if sr >= 0.1 && sr >= 1e-3 * svals[0] {
            break;
        }
        x = gen_lowrank(
            task.n,
            task.m,
            task.r,
            seed::mix(base, attempt),
            decay_exponent,
        )?;
    }
    Ok(x)
}

fn run_algo(
    spec: &ExperimentSpec,
    op: &AffineOperator,
    b: &DVector<f64>,
    algo: Algo,
) -> Result<solver::RecoveryReport, SolveError> {
    match algo {
        Algo::Barm => {
            let config = BarmConfig {
                lambda: spec.lambda_barm,
                mode: spec.barm_mode,
                ..BarmConfig::default()
            };
            solver::solve(op, b, &config)
        }
        Algo::Nuclear => {
            let config = if spec.noise_sigma > 0.0 {
                NucConfig::regularized(spec.lambda_nuclear.unwrap_or(spec.lambda_barm))
            } else {
                NucConfig::default()
            };
            baselines::nuclear_norm_solve(op, b, &config)
        }
        Algo::Irls0 => baselines::irls0_solve(op, b, &Irls0Config::default()),
    }
}

/// Execute one trial across all configured algorithms. Algorithm failures
/// are encoded in the records rather than propagated.
pub fn run_task(spec: &ExperimentSpec, task: &TrialTask) -> Result<Vec<TrialOutcome>, BenchError> {
    run_task_with(spec, task, &spec.algorithms)
}

/// Run a subset of the configured algorithms on one trial's instance. The
/// instance depends only on the task seed, so partial runs stay paired.
pub fn run_task_with(
    spec: &ExperimentSpec,
    task: &TrialTask,
    algorithms: &[Algo],
) -> Result<Vec<TrialOutcome>, BenchError> {
    let x0 = gen_ground_truth(task, spec.decay_exponent)?;
    let mut ens = EnsembleSpec::new(task.kind, task.n, task.m, task.p, seed::mix(task.seed, 1));
    ens.corr_decay = spec.corr_decay;
    let op = AffineOperator::generate(&ens)?;
    let observed = add_noise(&x0, spec.noise_sigma, seed::mix(task.seed, 2));
    let b = op.apply(&vec_of(&observed))?;

    let mut outcomes = Vec::with_capacity(algorithms.len());
    for &algo in algorithms {
        let start = Instant::now();
        let result = run_algo(spec, &op, &b, algo);
        let wall_milliseconds = start.elapsed().as_secs_f64() * 1e3;
        let (record, xhat) = match result {
            Ok(report) => {
                let relerr = rel(&x0, &report.xhat)?;
                let record = TrialRecord {
                    n: task.n,
                    m: task.m,
                    r: task.r,
                    p: task.p,
                    kind: task.kind,
                    trial_index: task.trial_index,
                    derived_seed: task.seed,
                    algorithm: algo,
                    rel: relerr,
                    fos_success: relerr < 1e-3,
                    fors_success: fors(&report.xhat, task.r, &op, &b)?,
                    est_rank: report.est_rank,
                    iterations: report.iterations,
                    wall_milliseconds,
                    residual: report.residual,
                };
                (record, report.xhat)
            }
            Err(_) => {
                let record = TrialRecord {
                    n: task.n,
                    m: task.m,
                    r: task.r,
                    p: task.p,
                    kind: task.kind,
                    trial_index: task.trial_index,
                    derived_seed: task.seed,
                    algorithm: algo,
                    rel: f64::MAX,
                    fos_success: false,
                    fors_success: false,
                    est_rank: 0,
                    iterations: 0,
                    wall_milliseconds,
                    residual: f64::MAX,
                };
                (record, DMatrix::zeros(task.n, task.m))
            }
        };
        outcomes.push(TrialOutcome { record, xhat });
    }
    Ok(outcomes)
}

/// Run the sweep, keeping estimates. Trials execute in the current rayon
/// pool; outputs are ordered by the deterministic plan.
pub fn run_sweep_full(spec: &ExperimentSpec) -> Result<Vec<TrialOutcome>, BenchError> {
    let tasks = plan(spec)?;
    let mut results: Vec<(usize, Result<Vec<TrialOutcome>, BenchError>)> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| (i, run_task(spec, task)))
        .collect();
    results.sort_by_key(|(i, _)| *i);
    let mut outcomes = Vec::new();
    for (_, res) in results {
        outcomes.extend(res?);
    }
    Ok(outcomes)
}

/// Run the sweep and return one record per (cell, trial, algorithm).
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>, BenchError> {
    Ok(run_sweep_full(spec)?.into_iter().map(|o| o.record).collect())
}

/// Per-cell aggregation used by the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
    pub kind: EnsembleKind,
    pub algorithm: Algo,
    pub fos: f64,
    pub fors: f64,
    pub mean_rel: f64,
    pub mean_iters: f64,
}

/// Group records by cell and algorithm, in sorted cell order.
pub fn summarize(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut groups: HashMap<(usize, usize, usize, usize, u64, &str), Vec<&TrialRecord>> =
        HashMap::new();
    for rec in records {
        groups
            .entry((
                rec.n,
                rec.m,
                rec.r,
                rec.p,
                rec.kind.code(),
                rec.algorithm.name(),
            ))
            .or_default()
            .push(rec);
    }
    let mut keys: Vec<_> = groups.keys().cloned().collect();
    keys.sort();
    keys.into_iter()
        .map(|key| {
            let group = &groups[&key];
            let count = group.len() as f64;
            let cloned: Vec<TrialRecord> = group.iter().map(|r| (*r).clone()).collect();
            CellSummary {
                n: key.0,
                m: key.1,
                r: key.2,
                p: key.3,
                kind: group[0].kind,
                algorithm: group[0].algorithm,
                fos: fos(&cloned),
                fors: fors_fraction(&cloned),
                mean_rel: group.iter().map(|r| r.rel).sum::<f64>() / count,
                mean_iters: group.iter().map(|r| r.iterations as f64).sum::<f64>() / count,
            }
        })
        .collect()
}

/// Element-wise mean of the sorted spectra of archived estimates over the
/// FoS failures among `records`. Empty when there are no failures.
pub fn failure_spectrum(
    records: &[TrialRecord],
    archive: &HashMap<RecordKey, DMatrix<f64>>,
) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for rec in records.iter().filter(|r| !r.fos_success) {
        let Some(xhat) = archive.get(&rec.key()) else {
            continue;
        };
        let svals = xhat.clone().svd(false, false).singular_values;
        if acc.is_empty() {
            acc = vec![0.0; svals.len()];
        }
        for (a, s) in acc.iter_mut().zip(svals.iter()) {
            *a += s;
        }
        count += 1;
    }
    if count > 0 {
        for a in &mut acc {
            *a /= count as f64;
        }
    }
    acc
}
