//! End-to-end tests of the `ivrobust` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ivrobust"))
}

fn write_e2(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("e2.csv");
    fs::write(
        &path,
        "Y,D,Z1,Z2\n2,1,1,0\n0,0,1,0\n4,1,0,1\n0,0,0,1\n0,0,0,0\n0,0,0,0\n",
    )
    .unwrap();
    path
}

fn run(mut cmd: Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

#[test]
fn estimate_e2_json_matches_pinned_values() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_e2(dir.path());
    let mut cmd = bin();
    cmd.args([
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--outcome",
        "Y",
        "--endogenous",
        "D",
        "--instruments",
        "Z1,Z2",
        "--format",
        "json",
    ]);
    let doc = stdout_json(&run(cmd));
    assert_eq!(doc["schema_version"], 1);
    assert!((doc["rho"].as_f64().unwrap() - 3.0).abs() < 1e-10);
    assert!((doc["se_c"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-6);
    assert!((doc["se_mr"].as_f64().unwrap() - 4.25f64.sqrt()).abs() < 1e-6);
    assert!((doc["j"]["statistic"].as_f64().unwrap() - 3.0).abs() < 1e-8);
    assert_eq!(doc["j"]["dof"], 1);
    assert!((doc["f_classical"][0].as_f64().unwrap() - 0.5).abs() < 1e-10);
    assert!((doc["cragg_donald"].as_f64().unwrap() - 0.5).abs() < 1e-8);
}

#[test]
fn estimate_text_and_json_report_identical_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_e2(dir.path());
    let args = |fmt: &str| {
        let mut cmd = bin();
        cmd.args([
            "estimate",
            "--data",
            data.to_str().unwrap(),
            "--outcome",
            "Y",
            "--endogenous",
            "D",
            "--instruments",
            "Z1,Z2",
            "--format",
            fmt,
        ]);
        cmd
    };
    let text = run(args("text"));
    assert!(text.status.success());
    let text_out = String::from_utf8(text.stdout).unwrap();
    // spot-check printed 6-significant-digit values against the JSON ones
    assert!(text_out.contains("3.00000"), "{text_out}");
    assert!(text_out.contains("0.707107"), "{text_out}");
    assert!(text_out.contains("2.06155"), "{text_out}");
    let doc = stdout_json(&run(args("json")));
    assert!((doc["rho"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn missing_file_is_input_error_with_path() {
    let mut cmd = bin();
    cmd.args([
        "estimate",
        "--data",
        "/nonexistent/path/data.csv",
        "--outcome",
        "Y",
        "--endogenous",
        "D",
        "--instruments",
        "Z",
    ]);
    let out = run(cmd);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/path/data.csv"), "{err}");
}

#[test]
fn cluster_vce_without_cluster_id_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_e2(dir.path());
    let mut cmd = bin();
    cmd.args([
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--outcome",
        "Y",
        "--endogenous",
        "D",
        "--instruments",
        "Z1,Z2",
        "--vce",
        "cluster-mr",
    ]);
    let out = run(cmd);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cluster id required"), "{err}");
}

#[test]
fn rank_deficient_data_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("collinear.csv");
    // instrument identical to the constant
    fs::write(&path, "Y,D,Z\n1,0,1\n2,1,1\n3,0,1\n4,1,1\n").unwrap();
    let mut cmd = bin();
    cmd.args([
        "estimate",
        "--data",
        path.to_str().unwrap(),
        "--outcome",
        "Y",
        "--endogenous",
        "D",
        "--instruments",
        "Z",
    ]);
    let out = run(cmd);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn psiv_runs_on_saturated_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f1.csv");
    fs::write(
        &path,
        "Y,D,Z1,Z2\n1.5,1,0,0\n0.2,0,0,0\n0.7,0,0,0\n-0.4,0,0,0\n2.3,1,1,0\n3.1,1,1,0\n0.6,0,1,0\n1.1,0,1,0\n4.2,1,0,1\n3.3,1,0,1\n2.8,1,0,1\n0.9,0,0,1\n",
    )
    .unwrap();
    let mut cmd = bin();
    cmd.args([
        "psiv",
        "--data",
        path.to_str().unwrap(),
        "--outcome",
        "Y",
        "--endogenous",
        "D",
        "--instruments",
        "Z1,Z2",
        "--format",
        "json",
    ]);
    let doc = stdout_json(&run(cmd));
    assert!((doc["rho"].as_f64().unwrap() - 4.6).abs() < 1e-8);
    assert!(doc["logit"]["converged"].as_bool().unwrap());
}

#[test]
fn bootstrap_reports_critical_values_and_ci() {
    let dir = tempfile::tempdir().unwrap();
    // a larger dataset so resamples are well behaved
    let mut body = String::from("Y,D,Z1,Z2\n");
    let mut state = 88172645463325252u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..200 {
        let group = (next() * 3.0) as usize;
        let (z1, z2) = match group {
            1 => (1.0, 0.0),
            2 => (0.0, 1.0),
            _ => (0.0, 0.0),
        };
        let d = if group > 0 && next() < 0.6 { 1.0 } else { 0.0 };
        let y = 1.0 + 2.0 * d + (next() - 0.5) * 2.0;
        body.push_str(&format!("{y},{d},{z1},{z2}\n"));
    }
    let path = dir.path().join("boot.csv");
    fs::write(&path, body).unwrap();
    let mut cmd = bin();
    cmd.args([
        "bootstrap",
        "--data",
        path.to_str().unwrap(),
        "--outcome",
        "Y",
        "--endogenous",
        "D",
        "--instruments",
        "Z1,Z2",
        "--replicates",
        "199",
        "--seed",
        "7",
        "--format",
        "json",
    ]);
    let doc = stdout_json(&run(cmd));
    assert_eq!(doc["seed"], 7);
    assert_eq!(doc["replicates"], 199);
    let cv = doc["critical_values"].as_array().unwrap();
    assert_eq!(cv.len(), 3);
    let ci = doc["ci"]["equal_tailed"].as_array().unwrap();
    assert!(ci[0].as_f64().unwrap() <= ci[1].as_f64().unwrap());
}

#[test]
fn simulate_is_deterministic_and_validates_config() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("dgp.json");
    let config = serde_json::json!({
        "type_probs": {"never": 0.3, "always": 0.1, "compliers": [0.3, 0.3]},
        "instrument_probs": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
        "effect_means": {"never": 3.0, "always": 3.0, "compliers": [3.0, 3.0]},
        "effect_sd": 0.0,
        "baseline_mean": 1.0,
        "baseline_sd": 1.0,
        "noise_sd_untreated": 1.0,
        "noise_sd_treated": 1.0,
        "n": 300,
        "seed": 1
    });
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let run_once = |tag: &str| {
        let summary = dir.path().join(format!("summary_{tag}.json"));
        let reps = dir.path().join(format!("reps_{tag}.csv"));
        let mut cmd = bin();
        cmd.args([
            "simulate",
            "--config",
            config_path.to_str().unwrap(),
            "--replications",
            "50",
            "--seed",
            "11",
            "--out-summary",
            summary.to_str().unwrap(),
            "--out-replicates",
            reps.to_str().unwrap(),
        ]);
        let out = run(cmd);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        (
            out.stdout,
            fs::read(summary).unwrap(),
            fs::read(reps).unwrap(),
        )
    };
    let a = run_once("a");
    let b = run_once("b");
    assert_eq!(a.0, b.0, "stdout differs between identical runs");
    assert_eq!(a.1, b.1, "summary JSON differs between identical runs");
    assert_eq!(a.2, b.2, "replicate CSV differs between identical runs");

    let summary: serde_json::Value = serde_json::from_slice(&a.1).unwrap();
    assert_eq!(summary["completed"], 50);
    assert!((summary["rho0"].as_f64().unwrap() - 3.0).abs() < 1e-10);

    // invalid probabilities: exit 2 with a validation message
    let bad = serde_json::json!({
        "type_probs": {"never": 0.5, "always": 0.1, "compliers": [0.3, 0.3]},
        "instrument_probs": [0.34, 0.33, 0.33],
        "effect_means": {"never": 0.0, "always": 1.0, "compliers": [2.0, 4.0]},
        "effect_sd": 1.0,
        "baseline_mean": 1.0,
        "baseline_sd": 1.0,
        "noise_sd_untreated": 1.0,
        "noise_sd_treated": 1.0,
        "n": 100,
        "seed": 1
    });
    let bad_path = dir.path().join("bad.json");
    fs::write(&bad_path, serde_json::to_string(&bad).unwrap()).unwrap();
    let mut cmd = bin();
    cmd.args(["simulate", "--config", bad_path.to_str().unwrap()]);
    let out = run(cmd);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sum"), "{err}");
}

#[test]
fn heterogeneous_simulation_separates_the_two_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("het.json");
    let config = serde_json::json!({
        "type_probs": {"never": 0.3, "always": 0.1, "compliers": [0.3, 0.3]},
        "instrument_probs": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
        "effect_means": {"never": 0.0, "always": 1.0, "compliers": [2.0, 4.0]},
        "effect_sd": 1.0,
        "baseline_mean": 1.0,
        "baseline_sd": 1.0,
        "noise_sd_untreated": 1.0,
        "noise_sd_treated": 1.0,
        "n": 2000,
        "seed": 1
    });
    fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let mut cmd = bin();
    cmd.args([
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--replications",
        "200",
        "--seed",
        "3",
        "--format",
        "json",
    ]);
    let doc = stdout_json(&run(cmd));
    let se_c = doc["mean_se_c"].as_f64().unwrap();
    let se_mr = doc["mean_se_mr"].as_f64().unwrap();
    assert!(se_mr > se_c, "mean_se_mr {se_mr} not above mean_se_c {se_c}");
}

#[test]
fn generated_seed_is_printed_when_absent() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_e2(dir.path());
    // bootstrap on E2 fails (degenerate-ish), so use simulate for this check
    let config_path = dir.path().join("cfg.json");
    let config = serde_json::json!({
        "type_probs": {"never": 0.3, "always": 0.1, "compliers": [0.3, 0.3]},
        "instrument_probs": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
        "effect_means": {"never": 3.0, "always": 3.0, "compliers": [3.0, 3.0]},
        "effect_sd": 0.0,
        "baseline_mean": 1.0,
        "baseline_sd": 1.0,
        "noise_sd_untreated": 1.0,
        "noise_sd_treated": 1.0,
        "n": 200,
        "seed": 1
    });
    fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let mut cmd = bin();
    cmd.args([
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--replications",
        "3",
    ]);
    let out = run(cmd);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed: "), "{text}");
    let _ = data;
}
