use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nepv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nepv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn zero_d(dir: &Path) -> String {
    let p = dir.join("d0.mtx");
    std::fs::write(&p, "%%MatrixMarket matrix coordinate real general\n4 2 0\n").unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn solve_example_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nepv(&["solve", "--preset", "ex1", "--alpha", "0.46", "--out", out]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["converged"], true);
    assert!((r["rho_L"].as_f64().unwrap() - 0.89449).abs() < 5e-4);
    assert!(r["observed_rate"].as_f64().is_some());
    assert!(r["meta"]["config_sha256"].as_str().unwrap().len() == 64);
    let hist = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let mut lines = hist.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256="));
    assert_eq!(lines.next().unwrap(), "iter,nres,objective,sin_theta,gap");
}

#[test]
fn missing_matrix_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_matrix.mtx");
    let o = nepv(&[
        "solve",
        "--family",
        "theta",
        "--theta",
        "0.5",
        "--matrix-a",
        missing.to_str().unwrap(),
        "--matrix-b",
        missing.to_str().unwrap(),
        "--matrix-d",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_matrix.mtx"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "preset = ex1\nno_such_key = 3\n").unwrap();
    let o = nepv(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = nepv(&[
        "sweep",
        "--preset",
        "ex1",
        "--grid",
        "0:1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_d_runs_as_plain_scf_with_identity_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let d = zero_d(dir.path());
    let out = dir.path().join("out");
    let o = nepv(&[
        "solve",
        "--family",
        "custom",
        "--set",
        "weight=1",
        "--matrix-a",
        "random-gaussian:5",
        "--matrix-d",
        &d,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = json(&out.join("report.json"));
    assert_eq!(r["converged"], true);
    assert_eq!(r["alignment"]["q_is_identity"], true);
    assert_eq!(r["rank_d"], 0);
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        nepv(&["check", "--preset", "ex1", "--out", out])
            .status
            .code(),
        Some(0)
    );

    let o = nepv(&[
        "check",
        "--preset",
        "ex1",
        "--inject-fault",
        "dh-phi-sign",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    let c = json(&dir.path().join("check.json"));
    let dg = c["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|l| l["name"] == "fd DG")
        .unwrap();
    assert_eq!(dg["status"], "FAIL");
    assert!(dg["value"].as_f64().unwrap() > 0.1);

    let d = zero_d(dir.path());
    let o = nepv(&[
        "check",
        "--family",
        "custom",
        "--set",
        "weight=1",
        "--matrix-a",
        "tridiag",
        "--matrix-d",
        &d,
        "--out",
        out,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let c = json(&dir.path().join("check.json"));
    let na = c["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| l["status"] == "n/a")
        .count();
    assert!(na >= 3);
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = nepv(&[
            "sweep",
            "--preset",
            "ex2",
            "--grid",
            "0.2:0.4:9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        let s = nepv(&[
            "shift-sweep",
            "--preset",
            "ex2",
            "--alpha",
            "0.5",
            "--shift-grid",
            "0:15:16",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(s.status.code(), Some(0));
        (
            std::fs::read(out.join("sweep.csv")).unwrap(),
            std::fs::read(out.join("shifts.csv")).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert_eq!(String::from_utf8_lossy(&a.0).lines().count(), 2 + 9);
}

#[test]
fn single_point_sweep_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nepv(&[
        "sweep",
        "--preset",
        "ex1",
        "--grid",
        "0.46:0.46:1",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = nepv::output::read_csv(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows[0][col("converged")], "true");
    let rho: f64 = rows[0][col("rho_L")].parse().unwrap();

    assert_eq!(
        nepv(&["solve", "--preset", "ex1", "--out", out])
            .status
            .code(),
        Some(0)
    );
    let r = json(&dir.path().join("report.json"));
    assert!((r["rho_L"].as_f64().unwrap() - rho).abs() < 1e-8);
}

#[test]
fn help_documents_csv_columns() {
    let o = nepv(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("param,converged,observed_rate,rho_L,gap,sigma_used"));
    assert!(text.contains("sigma,rho_L_sigma,observed_rate,converged"));
}
