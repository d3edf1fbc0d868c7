//! Command-line front end: single recoveries, sweeps, landscape traces and
//! report aggregation.
//!
//! Exit codes: 0 on success, 2 when an algorithm fails to converge, a
//! landscape direction is degenerate, or a report input is empty; 1 for
//! usage, configuration and file errors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use barm::baselines::{self, Irls0Config, NucConfig};
use barm::bench::{self, Algo, ExperimentSpec, RecordKey, TrialRecord};
use barm::io;
use barm::landscape::{self, DirectionMode, TraceMetadata};
use barm::linops::{AffineOperator, EnsembleKind, EnsembleSpec};
use barm::seed;
use barm::solver::{self, BarmConfig, RecoveryReport, SolveMode};

const EXIT_OK: i32 = 0;
const EXIT_FAILURE: i32 = 1;
const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Parser)]
#[command(name = "barm", version, about = "Low-rank recovery under affine measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a matrix from one operator and observation file.
    Solve(SolveArgs),
    /// Run a benchmark sweep from a TOML config.
    Sweep(SweepArgs),
    /// Trace rank surrogates along a 1-D feasible line.
    Landscape(LandscapeArgs),
    /// Aggregate sweep records into a per-cell table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgoArg {
    Barm,
    Nuclear,
    Irls0,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Column,
    Symmetric,
}

#[derive(Args)]
struct SolveArgs {
    /// Operator descriptor (.json) or dense matrix (.csv with '# p n m').
    #[arg(long)]
    op: PathBuf,
    /// Observation vector, one value per line.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Barm)]
    algo: AlgoArg,
    /// Covariance parameterization (barm only).
    #[arg(long, value_enum, default_value_t = ModeArg::Symmetric)]
    mode: ModeArg,
    /// Noise variance for barm; switches the nuclear solver to its
    /// regularized form when given.
    #[arg(long)]
    lambda: Option<f64>,
    /// Output path for the recovered matrix.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth matrix; enables the rel printout.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML file with a [sweep] table.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (records.jsonl, summary.csv, optional xhat/).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for trial execution.
    #[arg(long)]
    threads: Option<usize>,
    /// Skip (cell, trial, algorithm) records already present.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct LandscapeArgs {
    /// TOML file with a [landscape] table.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Input records (JSONL).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output summary CSV.
    #[arg(long)]
    out: PathBuf,
    /// Directory of archived estimates; adds a failure-spectrum CSV.
    #[arg(long = "failure-spectra")]
    failure_spectra: Option<PathBuf>,
}

/// Failure that decides the process exit code.
enum CliError {
    Usage(String),
    NotConverged(String),
}

impl CliError {
    fn usage(err: impl std::fmt::Display) -> Self {
        CliError::Usage(err.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => match err.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{err}");
                std::process::exit(EXIT_OK);
            }
            _ => {
                eprintln!("{err}");
                std::process::exit(EXIT_FAILURE);
            }
        },
    };
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Landscape(args) => cmd_landscape(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match outcome {
        Ok(()) => std::process::exit(EXIT_OK),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(EXIT_FAILURE);
        }
        Err(CliError::NotConverged(msg)) => {
            eprintln!("{msg}");
            std::process::exit(EXIT_NOT_CONVERGED);
        }
    }
}

fn run_solve_algo(
    args: &SolveArgs,
    op: &AffineOperator,
    b: &nalgebra::DVector<f64>,
) -> Result<RecoveryReport, CliError> {
    match args.algo {
        AlgoArg::Barm => {
            let config = BarmConfig {
                lambda: args.lambda.unwrap_or(1e-10),
                mode: match args.mode {
                    ModeArg::Column => SolveMode::Column,
                    ModeArg::Symmetric => SolveMode::Symmetric,
                },
                ..BarmConfig::default()
            };
            solver::solve(op, b, &config).map_err(CliError::usage)
        }
        AlgoArg::Nuclear => {
            let config = match args.lambda {
                Some(lambda) => NucConfig::regularized(lambda),
                None => NucConfig::default(),
            };
            baselines::nuclear_norm_solve(op, b, &config).map_err(CliError::usage)
        }
        AlgoArg::Irls0 => {
            baselines::irls0_solve(op, b, &Irls0Config::default()).map_err(CliError::usage)
        }
    }
}

fn cmd_solve(args: &SolveArgs) -> CliResult {
    let op = io::read_operator(&args.op).map_err(CliError::usage)?;
    let b = io::read_vector(&args.obs).map_err(CliError::usage)?;
    if b.len() != op.p() {
        return Err(CliError::Usage(format!(
            "{}: {} observations for an operator with p = {}",
            args.obs.display(),
            b.len(),
            op.p()
        )));
    }
    let report = run_solve_algo(args, &op, &b)?;
    io::write_matrix(&args.out, &report.xhat).map_err(CliError::usage)?;
    println!("residual {:e}", report.residual);
    println!("est_rank {}", report.est_rank);
    println!("iterations {}", report.iterations);
    if let Some(truth_path) = &args.truth {
        let truth = io::read_matrix(truth_path).map_err(CliError::usage)?;
        let rel = bench::rel(&truth, &report.xhat).map_err(CliError::usage)?;
        println!("rel {rel:e}");
    }
    if report.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "did not converge within {} iterations (residual {:e})",
            report.iterations, report.residual
        )))
    }
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    sweep: ExperimentSpec,
}

fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let file: SweepFile = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let spec = file.sweep;
    spec.validate().map_err(CliError::usage)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.out.display())))?;
    let records_path = args.out.join("records.jsonl");
    let summary_path = args.out.join("summary.csv");
    let xhat_dir = args.out.join("xhat");
    if spec.store_xhat {
        fs::create_dir_all(&xhat_dir)
            .map_err(|e| CliError::Usage(format!("{}: {e}", xhat_dir.display())))?;
    }

    let existing: HashSet<RecordKey> = if args.resume && records_path.exists() {
        io::read_records_jsonl(&records_path)
            .map_err(CliError::usage)?
            .iter()
            .map(TrialRecord::key)
            .collect()
    } else {
        if records_path.exists() {
            fs::remove_file(&records_path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", records_path.display())))?;
        }
        HashSet::new()
    };

    let tasks = bench::plan(&spec).map_err(CliError::usage)?;
    let todo: Vec<(bench::TrialTask, Vec<Algo>)> = tasks
        .into_iter()
        .filter_map(|task| {
            let missing: Vec<Algo> = spec
                .algorithms
                .iter()
                .copied()
                .filter(|&algo| {
                    !existing.contains(&RecordKey {
                        n: task.n,
                        m: task.m,
                        r: task.r,
                        p: task.p,
                        kind: task.kind,
                        trial_index: task.trial_index,
                        algorithm: algo,
                    })
                })
                .collect();
            (!missing.is_empty()).then_some((task, missing))
        })
        .collect();

    let writer = Mutex::new(());
    let run_all = || -> Result<(), String> {
        use rayon::prelude::*;
        todo.par_iter().try_for_each(|(task, algos)| {
            let outcomes =
                bench::run_task_with(&spec, task, algos).map_err(|e| e.to_string())?;
            let records: Vec<TrialRecord> =
                outcomes.iter().map(|o| o.record.clone()).collect();
            {
                let _guard = writer.lock().expect("writer lock");
                io::append_records_jsonl(&records_path, &records)
                    .map_err(|e| e.to_string())?;
            }
            if spec.store_xhat {
                for outcome in &outcomes {
                    let path = xhat_dir.join(format!("{}.mat", io::xhat_stem(&outcome.record)));
                    io::write_matrix(&path, &outcome.xhat).map_err(|e| e.to_string())?;
                }
            }
            Ok(())
        })
    };
    let result = match args.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(run_all),
        None => run_all(),
    };
    result.map_err(CliError::Usage)?;

    let all_records = io::read_records_jsonl(&records_path).map_err(CliError::usage)?;
    let summary = bench::summarize(&all_records);
    io::write_summary_csv(&summary_path, &summary).map_err(CliError::usage)?;
    println!(
        "{} records ({} new), summary in {}",
        all_records.len(),
        todo.iter().map(|(_, a)| a.len()).sum::<usize>(),
        summary_path.display()
    );
    Ok(())
}

fn default_landscape_kind() -> EnsembleKind {
    EnsembleKind::Completion
}

fn default_eta_min() -> f64 {
    -5.0
}

fn default_eta_max() -> f64 {
    5.0
}

fn default_eta_step() -> f64 {
    0.1
}

fn default_landscape_lambda() -> f64 {
    1e-6
}

fn default_v_mode() -> String {
    "nn-difference".into()
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct LandscapeConfig {
    #[serde(default = "default_landscape_kind")]
    kind: EnsembleKind,
    n: usize,
    m: usize,
    /// Rank of the planted feasible point.
    r: usize,
    p: usize,
    seed: u64,
    #[serde(default = "default_eta_min")]
    eta_min: f64,
    #[serde(default = "default_eta_max")]
    eta_max: f64,
    #[serde(default = "default_eta_step")]
    eta_step: f64,
    #[serde(default)]
    gammas: Vec<f64>,
    #[serde(default = "default_landscape_lambda")]
    lambda: f64,
    #[serde(default = "default_v_mode")]
    v_mode: String,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct LandscapeFile {
    landscape: LandscapeConfig,
}

fn cmd_landscape(args: &LandscapeArgs) -> CliResult {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let file: LandscapeFile = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let cfg = file.landscape;
    if !(cfg.eta_step > 0.0) || cfg.eta_max < cfg.eta_min {
        return Err(CliError::Usage("eta grid is empty or reversed".into()));
    }
    let mode = match cfg.v_mode.as_str() {
        "nn-difference" => DirectionMode::NnDifference,
        "random" => DirectionMode::Random {
            seed: seed::mix(cfg.seed, 2),
        },
        other => {
            return Err(CliError::Usage(format!(
                "v_mode {other:?} is neither \"nn-difference\" nor \"random\""
            )))
        }
    };

    let ens = EnsembleSpec::new(cfg.kind, cfg.n, cfg.m, cfg.p, cfg.seed);
    let op = AffineOperator::generate(&ens).map_err(CliError::usage)?;
    let xstar =
        bench::gen_lowrank(cfg.n, cfg.m, cfg.r, seed::mix(cfg.seed, 1), 0.0).map_err(CliError::usage)?;
    let v = match landscape::nullspace_direction(&op, &xstar, mode) {
        Ok(v) => v,
        Err(err @ landscape::LandscapeError::DegenerateDirection(_))
        | Err(err @ landscape::LandscapeError::TrivialNullspace) => {
            return Err(CliError::NotConverged(err.to_string()))
        }
        Err(err) => return Err(CliError::usage(err)),
    };

    let steps = ((cfg.eta_max - cfg.eta_min) / cfg.eta_step + 0.5).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| cfg.eta_min + i as f64 * cfg.eta_step).collect();
    let metadata = TraceMetadata {
        seed: Some(cfg.seed),
        v_mode: cfg.v_mode.clone(),
        lambda: cfg.lambda,
    };
    let trace =
        landscape::trace_penalties(&op, &xstar, &v, &grid, &cfg.gammas, cfg.lambda, metadata)
            .map_err(CliError::usage)?;
    io::write_trace_csv(&args.out, &trace).map_err(CliError::usage)?;
    println!("{} grid points in {}", grid.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> CliResult {
    let records = io::read_records_jsonl(&args.input).map_err(CliError::usage)?;
    if records.is_empty() {
        return Err(CliError::NotConverged(format!(
            "{}: no records to aggregate",
            args.input.display()
        )));
    }
    let summary = bench::summarize(&records);
    io::write_summary_csv(&args.out, &summary).map_err(CliError::usage)?;
    if let Some(dir) = &args.failure_spectra {
        let spectra_path = spectra_path_for(&args.out);
        write_failure_spectra(&records, dir, &spectra_path)?;
        println!("failure spectra in {}", spectra_path.display());
    }
    println!("{} cells in {}", summary.len(), args.out.display());
    Ok(())
}

fn spectra_path_for(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    name.push_str(".spectra.csv");
    out.with_file_name(name)
}

fn write_failure_spectra(records: &[TrialRecord], dir: &Path, out: &Path) -> CliResult {
    let mut archive: HashMap<RecordKey, nalgebra::DMatrix<f64>> = HashMap::new();
    for rec in records.iter().filter(|r| !r.fos_success) {
        let path = dir.join(format!("{}.mat", io::xhat_stem(rec)));
        if path.exists() {
            archive.insert(rec.key(), io::read_matrix(&path).map_err(CliError::usage)?);
        }
    }
    // Group records by cell and algorithm, in stable order.
    let mut groups: BTreeMap<(usize, usize, usize, usize, u64, String), Vec<TrialRecord>> =
        BTreeMap::new();
    for rec in records {
        groups
            .entry((
                rec.n,
                rec.m,
                rec.r,
                rec.p,
                rec.kind.code(),
                rec.algorithm.name().to_string(),
            ))
            .or_default()
            .push(rec.clone());
    }
    let mut rows = Vec::new();
    let mut width = 0usize;
    for (key, group) in &groups {
        let spectrum = bench::failure_spectrum(group, &archive);
        if spectrum.is_empty() {
            continue;
        }
        width = width.max(spectrum.len());
        let failures = group.iter().filter(|r| !r.fos_success).count();
        rows.push((key.clone(), group[0].kind, failures, spectrum));
    }
    let mut text = String::from("n,m,r,p,kind,algo,failures");
    for i in 1..=width {
        write!(text, ",sigma_{i}").expect("string write");
    }
    text.push('\n');
    for ((n, m, r, p, _, algo), kind, failures, spectrum) in rows {
        write!(text, "{n},{m},{r},{p},{},{algo},{failures}", kind_label(kind)).expect("string write");
        for i in 0..width {
            match spectrum.get(i) {
                Some(v) => write!(text, ",{v}").expect("string write"),
                None => text.push(','),
            }
        }
        text.push('\n');
    }
    fs::write(out, text).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    Ok(())
}

fn kind_label(kind: EnsembleKind) -> &'static str {
    match kind {
        EnsembleKind::Gaussian => "gaussian",
        EnsembleKind::Correlated => "correlated",
        EnsembleKind::Completion => "completion",
        EnsembleKind::DctSubsampled => "dct-subsampled",
        EnsembleKind::BlockDiagonal => "block-diagonal",
    }
}
