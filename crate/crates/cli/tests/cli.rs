use std::path::Path;
use std::process::{Command, Output};

use mmgm::datamodel::load_dataset;
use mmgm::inference::{simultaneous_test, ModelFit, TestOptions};
use mmgm::spatial::SpatialOptions;
use mmgm::temporal::TemporalOptions;
use mmgm::EdgeSet;
use serde_json::Value;

fn mmgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmgm"))
        .args(args)
        .env("MMGM_THREADS", "1")
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = mmgm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(args: &[&str]) -> (i32, Value) {
    let out = mmgm(args);
    let code = out.status.code().unwrap();
    assert_ne!(code, 0, "{args:?} unexpectedly succeeded");
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    (code, err)
}

fn simulate(dir: &Path) -> String {
    let data = dir.join("data").to_string_lossy().into_owned();
    ok_json(&[
        "simulate", "--kind", "chain", "--m", "2", "--n", "4", "--p", "12", "--q", "5", "--seed", "3", "--out", &data,
    ]);
    data
}

#[test]
fn sup_norm_matches_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let out = dir.path().join("res").to_string_lossy().into_owned();
    let summary = ok_json(&["test", "--data", &data, "--edges", "off-diagonal", "--bootstrap", "300", "--seed", "9", "--out", &out]);

    let ds = load_dataset(&data).unwrap();
    let fit = ModelFit::fit(&ds, &SpatialOptions::default(), &TemporalOptions::default()).unwrap();
    let opts = TestOptions { alpha: 0.05, bootstrap: 300, seed: 9 };
    let lib = simultaneous_test(&fit.estimates(), &EdgeSet::off_diagonal(5), &opts, None).unwrap().result;
    let r = &summary["result"];
    assert_eq!(r["sup_norm"].as_f64().unwrap().to_bits(), lib.sup_norm.to_bits());
    assert_eq!(r["quantile"].as_f64().unwrap().to_bits(), lib.quantile.to_bits());
    assert_eq!(r["reject"].as_bool().unwrap(), lib.reject);
    assert_eq!(r["num_edges"].as_u64().unwrap(), 10);
}

#[test]
fn saved_fit_gives_same_result_as_refitting() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let fit_dir = dir.path().join("fit").to_string_lossy().into_owned();
    ok_json(&["fit", "--data", &data, "--out", &fit_dir]);
    let a = dir.path().join("a").to_string_lossy().into_owned();
    let b = dir.path().join("b").to_string_lossy().into_owned();
    let from_fit = ok_json(&["test", "--data", &data, "--fit-dir", &fit_dir, "--edges", "zero", "--bootstrap", "200", "--out", &a]);
    let refit = ok_json(&["test", "--data", &data, "--edges", "zero", "--bootstrap", "200", "--out", &b]);
    assert_eq!(from_fit["result"], refit["result"]);
}

#[test]
fn cross_block_edges_are_enumerated_row_major() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let out = dir.path().join("res");
    let summary = ok_json(&[
        "test", "--data", &data, "--edges", "cross-block:0..2,2..4", "--bootstrap", "200", "--seed", "4",
        "--out", &out.to_string_lossy(),
    ]);
    assert_eq!(summary["result"]["num_edges"], 4);
    let hash = &summary["spec_hash"].as_str().unwrap()[..12];
    let csv = std::fs::read_to_string(out.join(format!("test_edges_{hash}_s4.csv"))).unwrap();
    let pairs: Vec<(usize, usize)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().parse().unwrap(), f.next().unwrap().parse().unwrap())
        })
        .collect();
    assert_eq!(pairs, vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
    assert!(out.join(format!("test_{hash}_s4.json")).exists());
}

#[test]
fn user_errors_exit_one_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let out = dir.path().join("res").to_string_lossy().into_owned();

    let (code, err) = error_json(&["fit", "--data", "/nonexistent/dataset", "--out", &out]);
    assert_eq!(code, 1);
    assert_eq!(err["error"]["exit_code"], 1);
    assert!(err["error"]["kind"].is_string());
    assert!(err["error"]["message"].is_string());

    let (code, err) = error_json(&["test", "--data", &data, "--edges", "pairs:0-0", "--out", &out]);
    assert_eq!(code, 1);
    assert!(err["error"]["message"].as_str().unwrap().contains("self-loop"));

    let (code, _) = error_json(&["test", "--data", &data, "--edges", "off-diagonal", "--level", "1.5", "--out", &out]);
    assert_eq!(code, 1);

    let (code, err) = error_json(&["simulate", "--bogus-flag"]);
    assert_eq!(code, 1);
    assert_eq!(err["error"]["kind"], "UsageError");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let config = dir.path().join("cfg.json");
    std::fs::write(&config, r#"{"spatial": {"gama": 0.1}}"#).unwrap();
    let out = dir.path().join("res").to_string_lossy().into_owned();
    let (code, err) = error_json(&["fit", "--config", &config.to_string_lossy(), "--data", &data, "--out", &out]);
    assert_eq!(code, 1);
    assert_eq!(err["error"]["kind"], "ConfigError");
    assert!(err["error"]["message"].as_str().unwrap().contains("gama"));
}

#[test]
fn config_file_and_flags_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let config = dir.path().join("cfg.json");
    std::fs::write(&config, r#"{"test": {"bootstrap": 250, "seed": 6}, "edges": "zero"}"#).unwrap();
    let a = dir.path().join("a").to_string_lossy().into_owned();
    let b = dir.path().join("b").to_string_lossy().into_owned();
    let from_file = ok_json(&["test", "--config", &config.to_string_lossy(), "--data", &data, "--out", &a]);
    let from_flags = ok_json(&["test", "--data", &data, "--edges", "zero", "--bootstrap", "250", "--seed", "6", "--out", &b]);
    assert_eq!(from_file["spec_hash"], from_flags["spec_hash"]);
    assert_eq!(from_file["result"], from_flags["result"]);
}
