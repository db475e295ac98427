use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use casimir_core::cli::{self, CSV_HEADER};

fn casimir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casimir"))
        .args(args)
        .output()
        .unwrap()
}

fn run_in_process(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = cli::run(
        std::iter::once("casimir").chain(args.iter().copied()),
        &mut out,
    );
    (code, String::from_utf8(out).unwrap())
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const DEGENERATE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/degenerate.conf");

#[test]
fn malformed_config_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "bad.conf", "geometry.R = 1\ngeometry.r 0.5\n");
    let out = casimir(&["validate", "--config", &conf]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2, column 1"), "{err}");
}

#[test]
fn underpowered_validate_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(DEGENERATE)
        .unwrap()
        .replace("mc.n_loops = 2000", "mc.n_loops = 10");
    let conf = write_config(tmp.path(), "tiny.conf", &text);
    let (code, table) = run_in_process(&["validate", "--config", &conf]);
    assert_eq!(code, cli::EXIT_FAILED);
    assert!(table.contains("mc.n_loops >= 1000"), "{table}");
    assert!(table
        .lines()
        .any(|l| l.starts_with("PASS") && l.contains("theta relation")));
}

#[test]
fn invalid_geometry_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(DEGENERATE)
        .unwrap()
        .replace("geometry.r = 0.5", "geometry.r = 0");
    let conf = write_config(tmp.path(), "zero.conf", &text);
    assert_eq!(
        run_in_process(&["scan", "--config", &conf]).0,
        cli::EXIT_CONFIG
    );
    assert_eq!(
        run_in_process(&["scan", "--config", "/nonexistent/x.conf"]).0,
        cli::EXIT_CONFIG
    );
}

#[test]
fn unknown_domain_is_a_config_error() {
    assert_eq!(
        run_in_process(&["spectral", "--domain", "torus:1", "--betas", "0.1"]).0,
        cli::EXIT_CONFIG
    );
    assert_eq!(
        run_in_process(&["spectral", "--domain", "box:1x1", "--betas", "0.1"]).0,
        cli::EXIT_CONFIG
    );
    assert_eq!(
        run_in_process(&["spectral", "--domain", "disk:1", "--betas", "0"]).0,
        cli::EXIT_CONFIG
    );
}

#[test]
fn spectral_and_bound_print_reference_values() {
    let (code, text) = run_in_process(&["spectral", "--domain", "interval:1", "--betas", "0.1"]);
    assert_eq!(code, 0);
    assert!(
        text.contains("eigsum 7.61566") && text.contains("poisson 1.261566"),
        "{text}"
    );
    let (code, text) = run_in_process(&["bound", "--r", "0.1", "--R", "1", "--a", "0.05"]);
    assert_eq!(code, 0);
    assert!(text.contains("-2.49934"), "{text}");
}

#[test]
fn degenerate_scan_writes_zero_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let (code, _) = run_in_process(&["scan", "--config", DEGENERATE, "--out-dir", dir]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(tmp.path().join("degenerate.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 9);
        let a: f64 = row[0].parse().unwrap();
        assert!((a - (0.25 + 0.25 * k as f64)).abs() < 1e-12);
        // 17 significant digits in scientific notation
        let mantissa = row[1].split('e').next().unwrap();
        assert_eq!(
            mantissa.trim_start_matches('-').replace('.', "").len(),
            17,
            "{}",
            row[1]
        );
        for field in &row[1..5] {
            assert_eq!(field.parse::<f64>().unwrap(), 0.0);
        }
        assert_eq!((row[5], row[6], row[8]), ("0", "0", "0"));
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("degenerate.json")).unwrap())
            .unwrap();
    assert_eq!(json["seed"], 3);
    assert!(json["equilibrium"].is_null());
    assert_eq!(json["forces"].as_array().unwrap().len(), 4);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let text = fs::read_to_string(DEGENERATE)
        .unwrap()
        .replace("mc.n_loops = 2000", "mc.n_loops = 20");
    let conf = write_config(tmp.path(), "d.conf", &text);
    let (code, _) = run_in_process(&[
        "scan",
        "--config",
        &conf,
        "--out-dir",
        blocker.to_str().unwrap(),
    ]);
    assert_eq!(code, cli::EXIT_IO);
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_casimir"))
        .env("CASIMIR_THREADS", "zero")
        .args(["bound", "--r", "0.1", "--R", "1", "--a", "0.05"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
