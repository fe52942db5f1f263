use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mptp::io::{parse_sweep_csv, PathTable};
use mptp::run::read_manifest;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/configs")
        .join(name)
}

fn mptp(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mptp"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = mptp(args, &[]);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const QUADRATIC: &str = r#"{
  "potential": { "kind": "quadratic", "n": 1, "box": [[-3.0, 3.0]] },
  "xMinus": [1.0], "xPlus": [2.0], "mode": "free-T",
  "sigma": 0.5, "tau": TAU, "N": 400
}"#;

#[test]
fn tau_below_minimum_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &QUADRATIC.replace("TAU", "0.0005"));
    let out = mptp(
        &[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join("o").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tau"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &QUADRATIC
            .replace("TAU", "2.0")
            .replace("\"N\"", "\"seeed\": 1, \"N\""),
    );
    let out = mptp(&["solve", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(tmp.path(), &QUADRATIC.replace("TAU", "2.0"));
    let out = mptp(
        &["solve", "--config", cfg.to_str().unwrap()],
        &[("MPTP_TOLERANCES__NOPE", "1")],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr)
        .to_lowercase()
        .contains("nope"));
}

#[test]
fn solve_writes_the_oracle_path_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("quadratic_solve.json");
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        run_ok(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "--threads",
            "2",
        ]);
    }
    let header = std::fs::read_to_string(dirs[0].join("path.json")).unwrap();
    assert!(header.contains("\"T\": 1.31"), "{header}");
    let table =
        PathTable::parse(&std::fs::read_to_string(dirs[0].join("path.csv")).unwrap()).unwrap();
    assert_eq!(table.nodes.len(), 401);
    assert!((table.times[400] - 2f64.acosh()).abs() < 2e-3);

    let (ma, mb) = (
        read_manifest(&dirs[0]).unwrap(),
        read_manifest(&dirs[1]).unwrap(),
    );
    assert_eq!(ma.files, mb.files);
    for f in &ma.files {
        let a = std::fs::read(dirs[0].join(&f.path)).unwrap();
        assert_eq!(
            a,
            std::fs::read(dirs[1].join(&f.path)).unwrap(),
            "{}",
            f.path
        );
    }
    let strip = |m: &mptp::run::RunManifest| {
        let mut m = m.without_timings();
        m.config.output = PathBuf::new();
        m
    };
    assert_eq!(strip(&ma), strip(&mb));
}

#[test]
fn quadratic_sweep_has_no_bifurcations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("q");
    run_ok(&[
        "sweep",
        "--config",
        config("quadratic_sweep.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read_to_string(out.join("bifurcations.json"))
            .unwrap()
            .trim(),
        "[]"
    );
    let rows = parse_sweep_csv(&std::fs::read_to_string(out.join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows
        .iter()
        .all(|r| r.m_fixed == 0 && r.m_free == 0 && r.n == 0));
}

#[test]
fn double_well_sweep_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dw");
    run_ok(&[
        "sweep",
        "--config",
        config("double_well_fixed.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = parse_sweep_csv(&std::fs::read_to_string(out.join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.windows(2).all(|w| w[1].sigma > w[0].sigma));
    assert!(rows.iter().all(|r| r.m_fixed == r.conjugate_count));
    let bif = std::fs::read_to_string(out.join("bifurcations.json")).unwrap();
    assert!(
        bif.contains("\"verdict\": \"positively-unstable\""),
        "{bif}"
    );
    assert!(out.join("branch_00.csv").exists());
}

#[test]
fn fold_truncation_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fold");
    run_ok(&[
        "sweep",
        "--config",
        config("quadratic_fold.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let m = read_manifest(&out).unwrap();
    assert!(
        m.diagnostics.iter().any(|d| d.contains("possible fold")),
        "{:?}",
        m.diagnostics
    );
    let rows = parse_sweep_csv(&std::fs::read_to_string(out.join("sweep.csv")).unwrap()).unwrap();
    assert!(!rows.is_empty() && rows.len() < 4);
}

#[test]
fn selftest_passes_and_detects_sabotage() {
    let ok = mptp(&["selftest"], &[]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let bad = mptp(&["selftest"], &[("MPTP_TOLERANCES__KERNEL_TOL", "0.1")]);
    assert_eq!(bad.status.code(), Some(1));
    let table = String::from_utf8_lossy(&bad.stdout);
    assert!(
        table
            .lines()
            .any(|l| l.starts_with("FAIL") && l.contains("Sturm")),
        "{table}"
    );
}
