use std::path::PathBuf;

use tiadc_core::calib::{FilterBank, FilterSpec};
use tiadc_core::experiments::capture_file::{decode_capture, encode_capture};
use tiadc_core::experiments::config::parse_scenario;
use tiadc_core::experiments::{run_on_capture, run_scenario, CoeffMode, Scenario};
use tiadc_core::model::{simulate_capture, MismatchProfile, TiadcConfig, ToneSpec};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_match_builtins() {
    for name in Scenario::BUILTIN_NAMES {
        let text = std::fs::read_to_string(configs_dir().join(format!("{name}.cfg"))).unwrap();
        assert_eq!(parse_scenario(&text).unwrap(), Scenario::builtin(name).unwrap(), "{name}");
    }
}

#[test]
fn fig6_and_fig7_levels() {
    let r6 = run_scenario(&Scenario::fig6()).unwrap();
    assert!((r6.uncalibrated.sinad_db - 45.0).abs() <= 2.0, "{}", r6.uncalibrated.sinad_db);
    assert!(r6.calibrated.sinad_db >= 66.0);
    let r7 = run_scenario(&Scenario::builtin("fig7").unwrap()).unwrap();
    assert!((r7.uncalibrated.sinad_db - 36.0).abs() <= 2.0, "{}", r7.uncalibrated.sinad_db);
    assert!(r7.calibrated.sinad_db >= 66.0);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = Scenario::builtin("fig7").unwrap();
    run_scenario(&s).unwrap().write_outputs(a.path()).unwrap();
    run_scenario(&s).unwrap().write_outputs(b.path()).unwrap();
    for f in ["spectrum_uncal.csv", "spectrum_cal.csv", "calibrated.csv", "summary.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn file_round_trip_preserves_sinad() {
    let s = Scenario::fig6();
    let tone = s.tone().unwrap();
    let cap = simulate_capture(&tone, &s.config, &s.profile, s.total_samples()).unwrap();
    let back = decode_capture(&encode_capture(&cap).unwrap()).unwrap();
    let direct = run_on_capture(&s, &tone, &cap).unwrap();
    let via_file = run_on_capture(&s, &tone, &back).unwrap();
    assert_eq!(direct.uncalibrated.sinad_db, via_file.uncalibrated.sinad_db);
    assert_eq!(direct.calibrated.sinad_db, via_file.calibrated.sinad_db);
}

#[test]
fn background_mode_matches_ground_truth() {
    for name in ["fig6", "fig7"] {
        let truth = run_scenario(&Scenario::builtin(name).unwrap()).unwrap();
        let mut s = Scenario::builtin(name).unwrap();
        s.mode = CoeffMode::Estimated;
        let est = run_scenario(&s).unwrap();
        assert!(
            (est.calibrated.sinad_db - truth.calibrated.sinad_db).abs() <= 1.0,
            "{name}: {} vs {}",
            est.calibrated.sinad_db,
            truth.calibrated.sinad_db
        );
    }
}

#[test]
fn background_mode_refreshes_every_block() {
    let mut s = Scenario::fig6();
    s.mode = CoeffMode::Estimated;
    s.est_block = 1024;
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.estimates.len(), 2);
    for est in &r.estimates {
        assert!((est.gains[1] - 0.01).abs() < 2e-3, "{:?}", est.gains);
    }
}

#[test]
fn parallel_and_serial_paths_agree() {
    let mut s = Scenario::builtin("fig7").unwrap();
    let mut streams = Vec::new();
    for l in [1, 2, 3, 4, 8] {
        s.plan.parallelism = l;
        streams.push(run_scenario(&s).unwrap().calibrated_stream);
    }
    assert!(streams.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn divide_gain_variant_also_corrects() {
    let mut s = Scenario::fig6();
    s.spec.variant = tiadc_core::calib::Variant::DivideGain;
    let r = run_scenario(&s).unwrap();
    assert!(r.calibrated.sinad_db >= 66.0);
}

#[test]
fn offset_mismatch_is_removed() {
    let config = TiadcConfig::new(2, 1.0, 12).unwrap();
    let profile = MismatchProfile::new(vec![0.0, 0.01], vec![0.0; 2], vec![0.0; 2]).unwrap();
    let spec = FilterSpec::default();
    let tone = ToneSpec::new(0.9, 77.0 / 4096.0, 0.2);
    let cap = simulate_capture(&tone, &config, &profile, 2 * (2048 + 29)).unwrap();
    let mut s = Scenario::fig6();
    s.profile = profile.clone();
    let r = tiadc_core::experiments::run_with_bank(&s, &tone, &cap, &FilterBank::design(&profile, &spec).unwrap()).unwrap();
    let at_nyquist = |spurs: &[tiadc_core::metrics::Spur]| spurs.iter().find(|sp| sp.bin == 2048).unwrap().level_dbfs;
    let before = at_nyquist(&r.uncalibrated.spurs);
    let after = at_nyquist(&r.calibrated.spurs);
    // the subtracted offset is rounded to whole codes
    assert!(after < before - 20.0, "{before} -> {after}");
    assert!(r.calibrated.sinad_db > r.uncalibrated.sinad_db + 10.0);
}
