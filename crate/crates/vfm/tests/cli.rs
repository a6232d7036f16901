use std::path::Path;
use std::process::{Command, Output};

fn vfm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &str = "seed = 3\n[synth]\nwells = 2\npoints_min = 60\npoints_max = 80\n\
[train.m]\nepochs = 5\n[train.h]\nepochs = 3\n";

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(vfm(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(vfm(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(vfm(dir.path(), &["train", "--kind", "xx"]).status.code(), Some(1));
    assert_eq!(vfm(dir.path(), &["synth", "--wells", "0"]).status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seeed = 1\n").unwrap();
    let out = vfm(dir.path(), &["synth", "--config", "c.toml"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeed"));
}

#[test]
fn infeasible_synth_spec_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[synth]\np1_range = [10.0, 20.0]\np2_range = [12.0, 22.0]\n").unwrap();
    let out = vfm(dir.path(), &["synth", "--config", "c.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn pipeline_runs_and_eval_lists_missing_models() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), format!("{SMALL}[train.dd]\nepochs = 3\n")).unwrap();
    let base = ["--config", "c.toml", "--out", "o"];
    for cmd in [&["synth"][..], &["squash"], &["train", "--kind", "m", "--wells", "1"]] {
        let out = vfm(dir.path(), &[cmd, &base[..]].concat());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let o = dir.path().join("o");
    assert!(o.join("raw/well_02.truth.toml").exists());
    assert!(o.join("models/m/well_01.json").exists());
    assert!(!o.join("models/m/well_02.json").exists());

    let out = vfm(dir.path(), &[&["eval", "--kind", "m"][..], &base[..]].concat());
    assert_eq!(out.status.code(), Some(0));
    let missing = std::fs::read_to_string(o.join("eval/missing.csv")).unwrap();
    assert!(missing.contains("m,well_02,"), "{missing}");
    let metrics = std::fs::read_to_string(o.join("eval/metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().starts_with("m,well_01,test,"));

    let out = vfm(dir.path(), &[&["report"][..], &base[..]].concat());
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(o.join("report.txt")).unwrap();
    assert!(report.contains("m/well_01"));
}

#[test]
fn divergence_exits_3_and_keeps_other_wells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[train.dd]\nepochs = 3\nlearning_rate = 1e200\n");
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let base = ["--config", "c.toml", "--out", "o"];
    for cmd in ["synth", "squash"] {
        assert_eq!(vfm(dir.path(), &[&[cmd][..], &base[..]].concat()).status.code(), Some(0));
    }
    let out = vfm(dir.path(), &[&["train"][..], &base[..]].concat());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o/models");
    assert!(o.join("m/well_01.json").exists() && o.join("h/well_02.json").exists());
    let failures = std::fs::read_to_string(o.join("dd/failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 3, "{failures}");
}
