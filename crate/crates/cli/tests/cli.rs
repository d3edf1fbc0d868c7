//! End-to-end checks of the command-line surface and its exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use barm::bench;
use barm::io;
use barm::linops::{vec_of, AffineOperator, EnsembleKind, EnsembleSpec};
use barm::seed;
use nalgebra::DMatrix;
use tempfile::tempdir;

fn barm_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_barm"))
}

fn run(args: &[&str]) -> Output {
    barm_bin().args(args).output().expect("binary runs")
}

fn stdout_value(output: &Output, key: &str) -> String {
    let text = String::from_utf8_lossy(&output.stdout).into_owned();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} ")).map(str::to_owned))
        .unwrap_or_else(|| panic!("no '{key}' line in: {text}"))
}

fn write_dense_operator_csv(path: &Path, a: &DMatrix<f64>, n: usize, m: usize) {
    let mut text = format!("# {} {} {}\n", a.nrows(), n, m);
    for r in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|c| format!("{:.16e}", a[(r, c)])).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn solve_invertible_dense_operator_recovers_unique_solution() {
    let dir = tempdir().unwrap();
    let (n, m) = (3, 3);
    let a = seed::gaussian_matrix(&mut seed::rng(11), 9, 9);
    let xtrue = seed::gaussian_vector(&mut seed::rng(12), 9);
    let b = &a * &xtrue;
    let op_path = dir.path().join("op.csv");
    write_dense_operator_csv(&op_path, &a, n, m);
    let obs_path = dir.path().join("obs.csv");
    io::write_vector(&obs_path, &b).unwrap();
    let out_path = dir.path().join("xhat.mat");

    let output = run(&[
        "solve",
        "--op",
        op_path.to_str().unwrap(),
        "--obs",
        obs_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let xhat = io::read_matrix(&out_path).unwrap();
    let err = (vec_of(&xhat) - &xtrue).norm() / xtrue.norm();
    assert!(err < 1e-3, "recovered with error {err}");
    let residual: f64 = stdout_value(&output, "residual").parse().unwrap();
    assert!(residual < 1e-4);
}

#[test]
fn solve_with_missing_operator_file_exits_one() {
    let dir = tempdir().unwrap();
    let obs = dir.path().join("obs.csv");
    fs::write(&obs, "1.0\n").unwrap();
    let output = run(&[
        "solve",
        "--op",
        dir.path().join("nope.json").to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        dir.path().join("x.mat").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("nope.json"));
}

#[test]
fn solve_completion_fixture_reports_rank_one() {
    let dir = tempdir().unwrap();
    let (n, m, p) = (5, 5, 10);
    let fixture_seed = 76;
    let op = AffineOperator::generate(&EnsembleSpec::new(
        EnsembleKind::Completion,
        n,
        m,
        p,
        fixture_seed,
    ))
    .unwrap();
    let x0 = bench::gen_lowrank(n, m, 1, seed::mix(fixture_seed, 1), 0.0).unwrap();
    let b = op.apply(&vec_of(&x0)).unwrap();

    let desc = io::OperatorDescriptor::from_sampled(&op, Some(fixture_seed)).unwrap();
    let op_path = dir.path().join("op.json");
    io::write_descriptor(&op_path, &desc).unwrap();
    let obs_path = dir.path().join("obs.csv");
    io::write_vector(&obs_path, &b).unwrap();
    let truth_path = dir.path().join("truth.mat");
    io::write_matrix(&truth_path, &x0).unwrap();
    let out_path = dir.path().join("xhat.mat");

    let output = run(&[
        "solve",
        "--op",
        op_path.to_str().unwrap(),
        "--obs",
        obs_path.to_str().unwrap(),
        "--truth",
        truth_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert_eq!(stdout_value(&output, "est_rank"), "1");
    let rel: f64 = stdout_value(&output, "rel").parse().unwrap();
    assert!(rel < 1e-3, "rel {rel}");
}

fn smoke_sweep_config() -> String {
    r#"
[sweep]
kind = "completion"
n = 5
m = 5
ranks = [1]
p = 12
trials = 1
master_seed = 99
algorithms = ["barm"]
"#
    .to_string()
}

#[test]
fn sweep_smoke_produces_one_record_and_resume_skips_it() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(&config, smoke_sweep_config()).unwrap();
    let out_dir = dir.path().join("out");

    let output = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let records = io::read_records_jsonl(&out_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 1);
    assert!(out_dir.join("summary.csv").exists());

    // Resuming a finished sweep adds nothing.
    let output = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--resume",
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let records = io::read_records_jsonl(&out_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 1);
}

#[test]
fn sweep_rejects_empty_rank_list() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        smoke_sweep_config().replace("ranks = [1]", "ranks = []"),
    )
    .unwrap();
    let output = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn sweep_rejects_unknown_config_keys() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        smoke_sweep_config() + "wobble_factor = 3\n",
    )
    .unwrap();
    let output = run(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&output.stderr).contains("wobble_factor"),
        "stderr should name the offending key"
    );
}

fn landscape_config(extra: &str) -> String {
    format!(
        r#"
[landscape]
kind = "completion"
n = 5
m = 5
r = 1
p = 10
seed = 7
{extra}
"#
    )
}

#[test]
fn landscape_grid_has_one_row_per_eta() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("landscape.toml");
    fs::write(
        &config,
        landscape_config("eta_min = -5.0\neta_max = 5.0\neta_step = 0.1\ngammas = [1e-6]"),
    )
    .unwrap();
    let out = dir.path().join("trace.csv");
    let output = run(&[
        "landscape",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = fs::read_to_string(&out).unwrap();
    // Header comment + column header + 101 rows.
    assert_eq!(text.lines().count(), 103);
    assert!(text.lines().nth(1).unwrap().contains("logdet_gamma_1e-6"));
}

#[test]
fn landscape_single_point_and_no_gammas() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("landscape.toml");
    fs::write(
        &config,
        landscape_config("eta_min = 0.0\neta_max = 0.0\neta_step = 0.5"),
    )
    .unwrap();
    let out = dir.path().join("trace.csv");
    let output = run(&[
        "landscape",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with('#'));
    assert_eq!(lines.next().unwrap(), "eta,nuclear,barm");
    assert_eq!(lines.count(), 1);
}

#[test]
fn landscape_with_trivial_nullspace_exits_two() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("landscape.toml");
    // Full observation leaves no feasible line to trace.
    fs::write(
        &config,
        landscape_config("p = 25").replace("p = 10\n", ""),
    )
    .unwrap();
    let output = run(&[
        "landscape",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("trace.csv").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn report_aggregates_and_flags_empty_input() {
    let dir = tempdir().unwrap();

    // Build a small record set through the sweep machinery.
    let mut spec = bench::ExperimentSpec::new(
        EnsembleKind::Completion,
        5,
        5,
        vec![1],
        12,
        4,
        1234,
        vec![bench::Algo::Barm],
    );
    spec.store_xhat = true;
    let outcomes = bench::run_sweep_full(&spec).unwrap();
    let records_path = dir.path().join("records.jsonl");
    let records: Vec<bench::TrialRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    io::append_records_jsonl(&records_path, &records).unwrap();

    let out = dir.path().join("report.csv");
    let output = run(&[
        "report",
        "--in",
        records_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = fs::read_to_string(&out).unwrap();
    let summary = bench::summarize(&records);
    let expect_fos = summary[0].fos;
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "5");
    assert_eq!(fields[5], "barm");
    assert_eq!(fields[6].parse::<f64>().unwrap(), expect_fos);

    // Empty input exits 2.
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let output = run(&[
        "report",
        "--in",
        empty.to_str().unwrap(),
        "--out",
        dir.path().join("r2.csv").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn report_failure_spectra_match_library_aggregation() {
    let dir = tempdir().unwrap();
    // A deliberately impossible cell so that failures exist: rank 3 from
    // 12 completion measurements.
    let mut spec = bench::ExperimentSpec::new(
        EnsembleKind::Completion,
        5,
        5,
        vec![3],
        12,
        3,
        777,
        vec![bench::Algo::Barm],
    );
    spec.store_xhat = true;
    let outcomes = bench::run_sweep_full(&spec).unwrap();
    let records: Vec<bench::TrialRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    assert!(records.iter().any(|r| !r.fos_success));

    let records_path = dir.path().join("records.jsonl");
    io::append_records_jsonl(&records_path, &records).unwrap();
    let xhat_dir = dir.path().join("xhat");
    fs::create_dir_all(&xhat_dir).unwrap();
    let mut archive = std::collections::HashMap::new();
    for outcome in &outcomes {
        let path = xhat_dir.join(format!("{}.mat", io::xhat_stem(&outcome.record)));
        io::write_matrix(&path, &outcome.xhat).unwrap();
        archive.insert(outcome.record.key(), outcome.xhat.clone());
    }

    let out = dir.path().join("report.csv");
    let output = run(&[
        "report",
        "--in",
        records_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--failure-spectra",
        xhat_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let spectra_text = fs::read_to_string(dir.path().join("report.spectra.csv")).unwrap();
    let expected = bench::failure_spectrum(&records, &archive);
    let row = spectra_text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    for (i, want) in expected.iter().enumerate() {
        let got: f64 = fields[7 + i].parse().unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn help_exits_zero_and_unknown_flag_exits_one() {
    let output = run(&["--help"]);
    assert_eq!(output.status.code(), Some(0));
    let output = run(&["solve", "--bogus"]);
    assert_eq!(output.status.code(), Some(1));
}
