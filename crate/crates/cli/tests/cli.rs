use std::path::Path;
use std::process::{Command, Output};

fn tiadc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiadc")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary_value(stdout: &[u8], key: &str) -> f64 {
    String::from_utf8_lossy(stdout)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")).map(|v| v.parse().unwrap()))
        .unwrap_or_else(|| panic!("no {key} in output"))
}

#[test]
fn simulate_then_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let out = tiadc(&["simulate", "--config", "fig6", "--out", s(&runs)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(runs.join("capture.bin").exists() && runs.join("scenario.cfg").exists());

    let cal = dir.path().join("cal");
    let out = tiadc(&["calibrate", s(&runs.join("capture.bin")), "--mode", "truth", "--out", s(&cal)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let before = summary_value(&out.stdout, "sinad_uncal_db");
    let after = summary_value(&out.stdout, "sinad_cal_db");
    assert!((before - 45.0).abs() <= 2.0 && after >= 66.0, "{before} -> {after}");
    for f in ["summary.csv", "spectrum_uncal.csv", "spectrum_cal.csv", "calibrated.csv", "coeffs.csv"] {
        assert!(cal.join(f).exists(), "{f}");
    }

    // the written coefficient table reproduces the run
    let again = tiadc(&[
        "calibrate",
        s(&runs.join("capture.bin")),
        "--coeffs",
        s(&cal.join("coeffs.csv")),
        "--out",
        s(&dir.path().join("again")),
    ]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(summary_value(&again.stdout, "sinad_cal_db"), after);
}

#[test]
fn estimate_reports_the_injected_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/fig6.cfg")).unwrap();
    cfg.push_str("mode = est\n");
    let cfg_path = dir.path().join("est.cfg");
    std::fs::write(&cfg_path, cfg).unwrap();
    assert!(tiadc(&["simulate", "--config", s(&cfg_path), "--out", s(dir.path())]).status.success());
    let out = tiadc(&["estimate", s(&dir.path().join("capture.bin")), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[2] - 0.01).abs() < 5e-4 && (row[3] - 0.01).abs() < 5e-4, "{row:?}");

    let cal = tiadc(&["calibrate", s(&dir.path().join("capture.bin")), "--out", s(&dir.path().join("cal"))]);
    assert!(cal.status.success(), "{}", String::from_utf8_lossy(&cal.stderr));
    assert!(summary_value(&cal.stdout, "sinad_cal_db") >= 66.0);
}

#[test]
fn coefficient_word_length_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiadc(&["calibrate", "--config", "fig6", "--taps", "30", "--coeff-bits", "24", "--out", s(dir.path())]);
    assert!(out.status.success());
    let coeffs = std::fs::read_to_string(dir.path().join("coeffs.csv")).unwrap();
    assert_eq!(coeffs.lines().count(), 1 + 2 * 30);
    assert!(coeffs.lines().skip(1).all(|l| l.ends_with(",24,Q2.22")));
    assert!(summary_value(&out.stdout, "sinad_cal_db") >= 66.0);
}

#[test]
fn word_length_sweep_has_19_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiadc(&["sweep", "--axis", "coeff_bits", "--values", "12:30", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 20);
    assert!(csv.starts_with("axis,value,tone_freq_rel,sinad_uncal_db,sinad_cal_db,"));
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(tiadc(&["run", "--config", "fig7", "--seed", "9", "--out", s(d.path())]).status.success());
    }
    for f in ["summary.csv", "spectrum_cal.csv", "calibrated.csv", "coeffs.csv", "scenario.cfg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn spectrum_of_a_capture() {
    let dir = tempfile::tempdir().unwrap();
    assert!(tiadc(&["simulate", "--out", s(dir.path())]).status.success());
    let out = tiadc(&["spectrum", s(&dir.path().join("capture.bin")), "--freq", "0.019", "--out", s(dir.path())]);
    assert!(out.status.success());
    assert_eq!(summary_value(&out.stdout, "peak_bin"), 77.0);
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2049);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(tiadc(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(tiadc(&["run", "--config", "no-such-scenario", "--out", d]).status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(tiadc(&["run", "--config", s(&cfg), "--out", d]).status.code(), Some(2));
    assert_eq!(tiadc(&["run", "--variant", "mul", "--out", d]).status.code(), Some(2));
    assert_eq!(tiadc(&["sweep", "--axis", "coeff_bits", "--values", "x", "--out", d]).status.code(), Some(2));

    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"TIAD\x01\x00").unwrap();
    let out = tiadc(&["spectrum", s(&bad), "--out", d]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
    assert_eq!(tiadc(&["estimate", s(&dir.path().join("missing.bin")), "--out", d]).status.code(), Some(3));

    // a tone below one code cannot be fitted
    let cfg = dir.path().join("faint.cfg");
    std::fs::write(&cfg, "amplitude = 0.00001\nmode = est\n").unwrap();
    assert_eq!(tiadc(&["run", "--config", s(&cfg), "--out", d]).status.code(), Some(4));
}
