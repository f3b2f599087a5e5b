use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use invprox::experiments::{sample_initial_conditions, EXAMPLE_SEC7};
use invprox::EmpiricalSpace;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_invprox"))
}

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_config(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut c = bin();
    c.arg(cmd).arg("--config").arg(config).args(extra);
    c.output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn table1_prints_csv() {
    let out = run(&["table1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "subspace,proximity");
    let value = |i: usize| lines[i].split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(value(1) <= 1e-8);
    assert!((value(2) - 0.048).abs() <= 0.002);
    assert!((value(3) - 0.823).abs() <= 0.005);
}

#[test]
fn table1_writes_file_with_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["table1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert!(csv.starts_with("subspace,proximity\nS1,"));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
}

#[test]
fn proximity_on_bundled_configs() {
    let s2 = json(&run_config("proximity", &example("s2.json"), &[]));
    let p = s2["invariance_proximity"].as_f64().unwrap();
    assert!((p - 0.048).abs() <= 0.002);
    assert_eq!(s2["dim_S"], 4);
    assert_eq!(s2["witness_coeffs"].as_array().unwrap().len(), 4);
    assert!(s2["diagnostics"]["warnings"].as_array().unwrap().is_empty());

    let s1 = json(&run_config("proximity", &example("s1.json"), &[]));
    assert!(s1["invariance_proximity"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn floats_have_seventeen_significant_digits() {
    let out = run_config("proximity", &example("s3.json"), &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text
        .lines()
        .find(|l| l.contains("invariance_proximity"))
        .unwrap();
    let number = line.split(':').nth(1).unwrap().trim().trim_end_matches(',');
    let mantissa = number.split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17, "{number}");
}

#[test]
fn outputs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for cmd in ["proximity", "predict", "oracle", "residuals"] {
        for d in [&a, &b] {
            let out = run_config(
                cmd,
                &example("s3.json"),
                &["--out", d.path().to_str().unwrap()],
            );
            assert_eq!(out.status.code(), Some(0), "{cmd}");
        }
    }
    for f in [
        "proximity.json",
        "predict.csv",
        "predict.json",
        "oracle.json",
        "residuals.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        "predict",
        &example("s2.json"),
        &["--seed", "12345", "--out", dir.path().to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("predict.csv")).unwrap();
    assert!(csv.starts_with("# sampling_seed=12345\nk,median,q25,q75,min,max\n"));
    assert_eq!(csv.lines().count(), 12);
    let j: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("predict.json")).unwrap())
            .unwrap();
    assert_eq!(j["sampling_seed"], 12345);
}

#[test]
fn oracle_stays_below_closed_form() {
    let r = json(&run_config("oracle", &example("s3.json"), &[]));
    let closed = r["closed_form"].as_f64().unwrap();
    let oracle = r["oracle_max"].as_f64().unwrap();
    assert!(oracle <= closed + 1e-8);
    assert!(r["gap"].as_f64().unwrap() < 0.01 * closed);
    assert_eq!(r["argmax_coeffs"].as_array().unwrap().len(), 5);
}

#[test]
fn residuals_of_invariant_subspace_vanish() {
    let out = run_config("residuals", &example("s1.json"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda_re,lambda_im,residual,bound"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2] <= 1e-8));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(
        dir.path(),
        "empty.json",
        r#"{"system": "example_sec7", "dictionary": []}"#,
    );
    let out = run_config("proximity", &empty, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));

    let broken = write_config(dir.path(), "broken.json", "{\n  \"state_dim\": 2,\n  ]\n}");
    let out = run_config("proximity", &broken, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let typo = write_config(
        dir.path(),
        "typo.json",
        r#"{"system": "example_sec7", "dictionary": ["x1"], "tolerance": {}}"#,
    );
    assert_eq!(run_config("proximity", &typo, &[]).status.code(), Some(2));

    let bad_expr = write_config(
        dir.path(),
        "expr.json",
        r#"{"system": "example_sec7", "dictionary": ["x1 + * x2"]}"#,
    );
    let out = run_config("proximity", &bad_expr, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("position 5"));

    assert_eq!(
        run_config("proximity", &dir.path().join("missing.json"), &[])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["proximity"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_with_payload() {
    let dir = tempfile::tempdir().unwrap();
    let zero = write_config(
        dir.path(),
        "zero.json",
        r#"{"system": "example_sec7", "dictionary": ["x1 - x1"]}"#,
    );
    let out = run_config("proximity", &zero, &[]);
    assert_eq!(out.status.code(), Some(3));
    let payload: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(payload["error"], "DegenerateSpace");
}

#[test]
fn horizon_zero_gives_empty_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "h0.json",
        r#"{"system": "example_sec7", "dictionary": ["1", "x1", "x2"],
            "experiment": {"n_trajectories": 5, "horizon": 0, "sampling_seed": 1}}"#,
    );
    let out = run_config("predict", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["steps"].as_array().unwrap().is_empty());
}

#[test]
fn empirical_backend_from_snapshot_file() {
    let dir = tempfile::tempdir().unwrap();
    let starts = sample_initial_conditions(&EXAMPLE_SEC7.domain(), 500, 3);
    let snaps = EmpiricalSpace::from_map(&EXAMPLE_SEC7.dynamics(), starts.concat()).unwrap();
    snaps
        .write_csv(std::fs::File::create(dir.path().join("snaps.csv")).unwrap())
        .unwrap();
    let cfg = write_config(
        dir.path(),
        "emp.json",
        r#"{"state_dim": 2, "backend": {"empirical": {"snapshot_path": "snaps.csv"}},
            "dictionary": ["1", "x1", "x2", "x1^2", "x2^2"]}"#,
    );
    let prox = run_config("proximity", &cfg, &[]);
    assert_eq!(prox.status.code(), Some(0));
    let p = json(&prox)["invariance_proximity"].as_f64().unwrap();
    assert!(p > 0.5 && p < 1.0);
    let res = run_config("residuals", &cfg, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    // dynamics next to snapshots are refused unless trajectories are simulated
    let with_dyn = write_config(
        dir.path(),
        "emp_dyn.json",
        r#"{"state_dim": 2, "backend": {"empirical": {"snapshot_path": "snaps.csv"}},
            "dynamics": ["0.9*x1", "x2"], "dictionary": ["x1"]}"#,
    );
    assert_eq!(
        run_config("proximity", &with_dyn, &[]).status.code(),
        Some(2)
    );

    std::fs::write(dir.path().join("snaps.csv"), "x1,x2,y1,y2\n0.1,0.2,0.3\n").unwrap();
    assert_eq!(run_config("proximity", &cfg, &[]).status.code(), Some(2));
}
