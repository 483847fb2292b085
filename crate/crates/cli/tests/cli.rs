//! End-to-end checks of the command layer: documented outputs, exit codes,
//! and byte-level determinism.

use std::fs;
use std::process::Command;

use batchmem_cli::commands::{cmd_lab, cmd_oracle_verify, cmd_plot, cmd_run, cmd_sweep};
use batchmem_cli::commands::{OracleVerifyArgs, PlotKind};
use batchmem_cli::config::ExperimentConfig;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

#[test]
fn run_reference_cell_summary() {
    let cfg = config(
        r#"
[instance]
kind = "random"
k = 10

[policy]
kind = "algorithm1"
block_size = 3

[run]
horizon = 1000000
master_seed = 1
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(summary.batches, 22);
    assert!(summary.peak_state_bits <= 2400);
    assert!(dir.path().join("transcript.csv").exists());
    assert!(dir.path().join("transcript.bin").exists());
    let json = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(json.contains("\"batches\": 22"));
    // 22 batch rows + header in the CSV
    let csv = fs::read_to_string(dir.path().join("transcript.csv")).unwrap();
    assert_eq!(csv.lines().count(), 23);
    assert!(csv.starts_with("batch,start,end,state_bits,n_1"));
}

#[test]
fn run_constant_policy_regret() {
    let cfg = config(
        r#"
[instance]
kind = "bernoulli"
means = [0.25, 0.75]

[policy]
kind = "constant"
arm = 1

[run]
horizon = 1000
master_seed = 3
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_run(&cfg, dir.path()).unwrap();
    // always pulling arm 1 against best mean 0.75 costs 0.5 per round
    assert_eq!(summary.regret, 1000.0 * 0.5);
    assert_eq!(summary.batches, 1);
}

#[test]
fn run_fallback_below_regime() {
    let cfg = config(
        r#"
[instance]
kind = "random"
k = 10

[policy]
kind = "algorithm1"
block_size = 3

[run]
horizon = 200
master_seed = 3
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(summary.batches, 1);
    assert!(summary.warning.unwrap().contains("regime warning"));
}

#[test]
fn invalid_block_size_exits_2_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    fs::write(
        &cfg_path,
        r#"
[instance]
kind = "random"
k = 10

[policy]
kind = "algorithm1"
block_size = 0

[run]
horizon = 100000
master_seed = 1
"#,
    )
    .unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_batchmem"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("BlockSizeInvalid"), "stderr: {stderr}");
}

#[test]
fn budget_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tight.toml");
    fs::write(
        &cfg_path,
        r#"
[instance]
kind = "random"
k = 10

[policy]
kind = "algorithm1"
block_size = 3

[run]
horizon = 100000
master_seed = 1
budget_bits = 10
"#,
    )
    .unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_batchmem"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("BudgetExceeded"));
}

const SWEEP_CFG: &str = r#"
[instance]
kind = "random"
k = 4

[policy]
kind = "algorithm1"
block_size = 2

[run]
horizon = 1
master_seed = 11
replications = 5

[sweep]
horizons = [2000, 4000, 8000]
arm_counts = [4]
block_sizes = [1, 2]
"#;

#[test]
fn sweep_rows_and_determinism() {
    let cfg = config(SWEEP_CFG);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let summary = cmd_sweep(&cfg, dir_a.path()).unwrap();
    assert_eq!(summary.rows, 3 * 2 * 5); // horizons x block sizes x reps
    cmd_sweep(&cfg, dir_b.path()).unwrap();
    let csv_a = fs::read(dir_a.path().join("sweep.csv")).unwrap();
    let csv_b = fs::read(dir_b.path().join("sweep.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "sweep.csv not byte-identical");
    let json_a = fs::read(dir_a.path().join("sweep_summary.json")).unwrap();
    let json_b = fs::read(dir_b.path().join("sweep_summary.json")).unwrap();
    assert_eq!(json_a, json_b, "summary not byte-identical");
    // a regression slope is reported per (K, S, W) group
    assert_eq!(summary.regressions.len(), 2);
    for r in &summary.regressions {
        assert!(r.slope.is_finite());
    }
}

#[test]
fn sweep_flags_partial_failures() {
    // The second budget is too small for the state; those rows must be
    // flagged while the rest of the sweep continues.
    let cfg = config(
        r#"
[instance]
kind = "random"
k = 4

[policy]
kind = "algorithm1"
block_size = 2

[run]
horizon = 1
master_seed = 5
replications = 2

[sweep]
horizons = [4000]
arm_counts = [4]
block_sizes = [2]
budgets = [2000, 10]
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_sweep(&cfg, dir.path()).unwrap();
    assert_eq!(summary.rows, 4);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.contains("BudgetExceeded"));
    let ok_cells: Vec<_> = summary.cells.iter().filter(|c| c.ok > 0).collect();
    assert_eq!(ok_cells.len(), 1);
    assert_eq!(ok_cells[0].budget_bits, 2000);
}

#[test]
fn lab_with_threshold_above_horizon() {
    // n > T forces Y = 0: FN = K/2, FP = 0, P_e = 1/2 exactly.
    let cfg = config(
        r#"
[instance]
kind = "hard"
k = 8

[policy]
kind = "algorithm1"
block_size = 2

[run]
horizon = 10000
master_seed = 9
replications = 20

[lab]
threshold = 10001
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_lab(&cfg, dir.path()).unwrap();
    assert_eq!(summary.error.p_e, 0.5);
    assert_eq!(summary.error.mean_false_negatives, 4.0);
    assert_eq!(summary.error.mean_false_positives, 0.0);
    assert_eq!(summary.good_arm_crossing.rate, 0.0);
    // capacity is (B - 1) W by definition
    assert_eq!(
        summary.capacity_bound_bits,
        (summary.batches - 1) * summary.budget_bits
    );
    let csv = fs::read_to_string(dir.path().join("lab.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21); // header + 20 reps
}

#[test]
fn lab_with_grid_threshold_populates_fields() {
    let cfg = config(
        r#"
[instance]
kind = "hard"
k = 8

[policy]
kind = "algorithm1"
block_size = 2

[run]
horizon = 10000
master_seed = 2
replications = 10

[lab]
threshold_from = "t1"
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_lab(&cfg, dir.path()).unwrap();
    assert!(summary.threshold >= 1);
    assert!(summary.info_lower_bound_bits <= 8.0);
    assert!(summary.boundary_entropy_bits >= 0.0);
    let json = fs::read_to_string(dir.path().join("lab.json")).unwrap();
    assert!(json.contains("good_arm_crossing"));
    assert!(json.contains("capacity_bound_bits"));
}

#[test]
fn lab_regime_threshold_rejects_desk_scale() {
    let cfg = config(
        r#"
[instance]
kind = "hard"
k = 10

[policy]
kind = "algorithm1"
block_size = 3

[run]
horizon = 1000000
master_seed = 2
replications = 2

[lab]
threshold_from = "lb"
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_lab(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.code, "RegimeInvalid");
    assert_eq!(err.exit_code, 2);
    assert!(err.message.contains("> 1/4"), "message: {}", err.message);
}

#[test]
fn oracle_verify_small_corpus() {
    let args = OracleVerifyArgs {
        arms: 2,
        horizon: 4,
        policies: 10,
        gaps: vec![0.1, 0.25],
        policy_seed: 42,
    };
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_oracle_verify(&args, dir.path()).unwrap();
    assert_eq!(summary.violations, 0);
    assert_eq!(summary.truncation_violations, 0);
    assert!(summary.event_checks > 0);
    assert_eq!(
        summary.exact_rational_checks,
        summary.exact_rational_confirmed
    );
    assert!((summary.worked_example.p0 - 0.5).abs() < 1e-12);
    assert!((summary.worked_example.p1 - 0.25).abs() < 1e-12);
    assert!((summary.worked_example.chi_square - 1.0 / 3.0).abs() < 1e-12);
    assert!((summary.worked_example.bound - 0.5773502691896258).abs() < 1e-12);
    assert!(dir.path().join("slack.csv").exists());
    assert!(dir.path().join("oracle_report.json").exists());
}

#[test]
fn plot_from_sweep_and_slack() {
    let cfg = config(SWEEP_CFG);
    let dir = tempfile::tempdir().unwrap();
    cmd_sweep(&cfg, dir.path()).unwrap();
    for (kind, name) in [
        (PlotKind::Regret, "regret.svg"),
        (PlotKind::Batches, "batches.svg"),
        (PlotKind::Bits, "bits.svg"),
    ] {
        let out = dir.path().join(name);
        cmd_plot(kind, &dir.path().join("sweep.csv"), &out).unwrap();
        let svg = fs::read_to_string(&out).unwrap();
        assert!(svg.starts_with("<svg"), "{name} is not an svg");
        assert!(svg.contains("polyline"), "{name} has no curves");
    }

    let args = OracleVerifyArgs {
        arms: 2,
        horizon: 3,
        policies: 5,
        gaps: vec![0.25],
        policy_seed: 7,
    };
    cmd_oracle_verify(&args, dir.path()).unwrap();
    let out = dir.path().join("slack.svg");
    cmd_plot(PlotKind::Slack, &dir.path().join("slack.csv"), &out).unwrap();
    assert!(fs::read_to_string(out).unwrap().contains("circle"));
}

#[test]
fn plot_empty_csv_renders_axes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(
        &input,
        "horizon,arm_count,block_size,budget_bits,replication,seed,regret,batches,peak_bits,status\n",
    )
    .unwrap();
    let out = dir.path().join("empty.svg");
    cmd_plot(PlotKind::Regret, &input, &out).unwrap();
    let svg = fs::read_to_string(out).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn plot_schema_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("wrong.csv");
    fs::write(&input, "a,b\n1,2\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_batchmem"))
        .args(["plot", "--kind", "regret", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("x.svg"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("SchemaMismatch"));
}

#[test]
fn spec_example_sweep_arity() {
    // T in {1e4, 1e5, 1e6} x K=10, S=3, M=50 -> 150 rows.
    let cfg = config(
        r#"
[instance]
kind = "random"
k = 10

[policy]
kind = "algorithm1"
block_size = 3

[run]
horizon = 1
master_seed = 1
replications = 50

[sweep]
horizons = [10000, 100000, 1000000]
arm_counts = [10]
block_sizes = [3]
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_sweep(&cfg, dir.path()).unwrap();
    assert_eq!(summary.rows, 150);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 151);
    // the regression over log T is reported
    assert_eq!(summary.regressions.len(), 1);
    let slope = summary.regressions[0].slope;
    assert!(slope > 0.0 && slope < 1.0, "slope {slope}");
}
