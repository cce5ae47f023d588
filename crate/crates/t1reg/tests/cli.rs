//! Subcommand smoke tests and exit codes, run in-process.

use std::fs;
use std::path::Path;

use t1reg::cli::main_with_args;
use t1reg::evaluation::myocardial_sd;
use t1reg::io::{load_defs, load_mask, load_maps, load_series};
use t1reg_core::phantom::PhantomSpec;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("t1reg").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let spec = PhantomSpec {
        width: 48,
        height: 48,
        motion_smoothness_px: 6.0,
        ..PhantomSpec::default()
    };
    let path = dir.join("spec.json");
    fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path
}

#[test]
fn phantom_outputs_reload() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = dir.path().join("ph");
    assert_eq!(run(&["phantom", "--spec", s(&spec), "--out", s(&out), "--seed", "5"]), 0);
    let series = load_series(&out.join("series.json")).unwrap();
    assert_eq!((series.len(), series.width()), (11, 48));
    load_series(&out.join("aligned.json")).unwrap();
    load_defs(&out.join("truth_correction.json")).unwrap();
    assert!(load_mask(&out.join("mask.json")).unwrap().count() > 0);
    let truth = load_maps(&out.join("truth_maps")).unwrap();
    assert_eq!(truth.converged_fraction(), 1.0);
    let written: PhantomSpec = serde_json::from_slice(&fs::read(out.join("spec.json")).unwrap()).unwrap();
    assert_eq!(written.seed, 5);
}

#[test]
fn registration_lowers_the_fitted_sd() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = write_spec(d);
    let ph = d.join("ph");
    assert_eq!(run(&["phantom", "--spec", s(&spec), "--out", s(&ph)]), 0);
    let reg = d.join("run");
    assert_eq!(run(&["register", "--scenario", "pca-relax", "--in", s(&ph), "--out", s(&reg)]), 0);
    assert!(reg.join("report.json").is_file() && reg.join("config.json").is_file());
    let with = d.join("maps");
    let without = d.join("maps_raw");
    assert_eq!(run(&["fit", "--in", s(&ph), "--defs", s(&reg), "--out", s(&with)]), 0);
    assert_eq!(run(&["fit", "--in", s(&ph), "--out", s(&without)]), 0);

    let mask = load_mask(&ph.join("mask.json")).unwrap();
    let a = myocardial_sd(&load_maps(&with).unwrap(), &mask).unwrap().mean;
    let b = myocardial_sd(&load_maps(&without).unwrap(), &mask).unwrap().mean;
    assert!(a < b, "registered {a} vs raw {b}");

    let spectrum = d.join("spec_out");
    assert_eq!(run(&["spectrum", "--in", s(&ph), "--defs", s(&reg), "--out", s(&spectrum)]), 0);
    assert!(d.join("spec_out.csv").is_file() && d.join("spec_out.pgm").is_file());
}

#[test]
fn eval_batch_writes_a_row_per_sequence_and_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = write_spec(d);
    let cfg = d.join("cfg.json");
    fs::write(&cfg, r#"{"max_iterations": 15, "warmup_iterations": 5, "refit_period": 5}"#).unwrap();
    let out = d.join("eval");
    let code = run(&[
        "eval", "--batch", "2", "--scenarios", "raw,pca,pca-relax", "--spec", s(&spec), "--config", s(&cfg), "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(out.join("summary.json").is_file());
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nope");
    assert_eq!(run(&["fit", "--in", s(&missing), "--out", s(&d.join("m"))]), 1);
    assert_eq!(run(&["register", "--in", s(&missing), "--out", s(&d.join("r"))]), 1);
    assert_eq!(run(&["register", "--scenario", "bogus", "--in", s(&missing), "--out", s(d)]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["phantom", "--out", s(d), "--unknown-flag"]), 1);

    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"scenario": "pca", "learning_rate": "fast"}"#).unwrap();
    let spec = write_spec(d);
    let ph = d.join("ph");
    assert_eq!(run(&["phantom", "--spec", s(&spec), "--out", s(&ph)]), 0);
    assert_eq!(run(&["register", "--config", s(&bad), "--in", s(&ph), "--out", s(&d.join("r"))]), 1);
    fs::write(&bad, r#"{"width": -3}"#).unwrap();
    assert_eq!(run(&["phantom", "--spec", s(&bad), "--out", s(&d.join("p2"))]), 1);
    assert_eq!(run(&["eval", "--batch", "0", "--out", s(&d.join("e"))]), 1);
}

#[test]
fn unwritable_output_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = write_spec(d);
    // a regular file where the output directory should go
    let blocker = d.join("blocker");
    fs::write(&blocker, b"x").unwrap();
    assert_eq!(run(&["phantom", "--spec", s(&spec), "--out", s(&blocker.join("ph"))]), 2);
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
}
