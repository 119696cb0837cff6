use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ivcate(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ivcate"));
    cmd.args(args).env_remove("IVCATE_SEED");
    if let Some(s) = seed_env {
        cmd.env("IVCATE_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_kind(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn simulate(dir: &Path, name: &str, family: &str, n: &str, seed: &str) -> Output {
    let csv = dir.join(name);
    ivcate(
        &["simulate", "--family", family, "--n", n, "--seed", seed, "--out", csv.to_str().unwrap()],
        None,
    )
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", "coverage", "1000", "1");
    let b = simulate(dir.path(), "b.csv", "coverage", "1000", "1");
    assert!(a.status.success() && b.status.success());
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.truth.json"), read("b.truth.json"));
    let report = stdout_json(&a);
    assert_eq!(report["result"]["n"], 1000);
    assert_eq!(report["seed"], 1);
}

#[test]
fn simulate_tripadvisor_reports_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "ta.csv", "tripadvisor", "500", "3");
    stdout_json(&out);
    let truth: Value = serde_json::from_slice(&fs::read(dir.path().join("ta.truth.json")).unwrap()).unwrap();
    let ate = truth["true_ate"].as_f64().unwrap();
    assert!((ate - 0.249).abs() <= 0.002, "{ate}");
}

#[test]
fn invalid_family_is_an_argument_error() {
    let out = ivcate(&["simulate", "--family", "bogus", "--n", "10"], None);
    assert_eq!(error_kind(&out), "argument");
}

#[test]
fn fit_report_reproduces_from_its_config() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "d.csv", "coverage", "4000", "5");
    let data = dir.path().join("d.csv");
    let report = dir.path().join("r.json");
    let first = ivcate(
        &[
            "fit", "--data", data.to_str().unwrap(), "--variant", "driv", "--space", "linear_subset=days_visited_free_pre,os_type=Linux",
            "--seed", "4", "--out", report.to_str().unwrap(),
        ],
        None,
    );
    let v = stdout_json(&first);
    assert_eq!(v["command"], "fit");
    assert_eq!(v["seed"], 4);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["space"], "linear_subset=days_visited_free_pre,os_type=Linux");
    assert_eq!(v["result"]["projection"]["coefficients"].as_array().unwrap().len(), 3);
    assert!(v["result"]["ate"]["point"].is_number());
    assert_eq!(fs::read(&report).unwrap(), first.stdout);

    let again = ivcate(&["fit", "--config", report.to_str().unwrap()], None);
    assert!(again.status.success());
    assert_eq!(again.stdout, first.stdout);
}

#[test]
fn fit_without_instrument_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "y,t,x0\n1,0,0.5\n2,1,0.1\n").unwrap();
    let out = ivcate(&["fit", "--data", path.to_str().unwrap()], None);
    assert_eq!(error_kind(&out), "schema");
}

#[test]
fn flags_override_config_and_env_seeds_fall_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "family = \"tripadvisor\"\nn = 150\nseed = 11\n").unwrap();
    let c = cfg.to_str().unwrap();

    let from_file = stdout_json(&ivcate(&["simulate", "--config", c], Some("99")));
    assert_eq!(from_file["seed"], 11);
    assert_eq!(from_file["config"]["family"], "tripadvisor");

    let flag = stdout_json(&ivcate(&["simulate", "--config", c, "--seed", "12", "--n", "160"], None));
    assert_eq!(flag["seed"], 12);
    assert_eq!(flag["result"]["n"], 160);

    let env = stdout_json(&ivcate(&["simulate", "--n", "200"], Some("42")));
    assert_eq!(env["seed"], 42);
    let default = stdout_json(&ivcate(&["simulate", "--n", "200"], None));
    assert_eq!(default["seed"], 0);

    fs::write(&cfg, "colour = \"red\"\n").unwrap();
    assert_eq!(error_kind(&ivcate(&["simulate", "--config", c], None)), "config");
}

#[test]
fn coverage_output_ignores_thread_count() {
    let args = ["coverage", "--n", "1500", "--replicates", "10", "--seed", "2"];
    let one = ivcate(&[&args[..], &["--threads", "1"]].concat(), None);
    let two = ivcate(&[&args[..], &["--threads", "2"]].concat(), None);
    let v = stdout_json(&one);
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(v["result"][1]["estimator"], "driv");
    assert_eq!(v["result"][1]["replicates"], 10);
}

#[test]
fn verify_single_pair_flags_expected_non_orthogonality() {
    let out = ivcate(&["verify", "--matrix", "L1/h", "--n", "5000"], None);
    let v = stdout_json(&out);
    let row = &v["result"]["orthogonality"][0];
    assert_eq!(row["expected_orthogonal"], false);
    assert_eq!(row["pass"], true);
    assert_eq!(v["result"]["pass"], true);
}

#[test]
fn verify_orthogonality_matrix_passes() {
    let v = stdout_json(&ivcate(&["verify", "--matrix", "orthogonality"], None));
    assert_eq!(v["config"]["n"], 20_000);
    let rows = v["result"]["orthogonality"].as_array().unwrap();
    assert_eq!(rows.len(), 13);
    for row in rows {
        if row["expected_orthogonal"] == true {
            let slope = row["slope"].as_f64();
            assert!(row["flat"] == true || slope.is_some_and(|s| s >= 1.8), "{row}");
        }
    }
}

#[test]
fn verify_rejects_unknown_matrix() {
    assert_eq!(error_kind(&ivcate(&["verify", "--matrix", "everything"], None)), "argument");
    assert_eq!(error_kind(&ivcate(&["verify", "--matrix", "L1/beta"], None)), "argument");
}
