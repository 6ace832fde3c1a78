mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use strucfuse::experiment::{
    preset, rms_error_percent, run_experiment, validate_config, ExperimentConfig, RunOptions, PRESETS,
};

fn short_frame() -> ExperimentConfig {
    let mut cfg = preset("frame_500_50").unwrap();
    cfg.duration = 3.0;
    cfg.seeds = vec![1, 2];
    cfg
}

fn config_error(cfg: &ExperimentConfig) -> String {
    validate_config(cfg).expect_err("config should be rejected").to_string()
}

#[test]
fn every_preset_validates_and_round_trips() {
    for (name, _) in PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(cfg.name, name);
        validate_config(&cfg).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
}

#[test]
fn zero_channels_rejected_before_running() {
    let mut cfg = short_frame();
    cfg.channels.clear();
    cfg.baselines = None;
    assert!(config_error(&cfg).contains("channels"));
    let err = run_experiment(&cfg, &RunOptions::default()).unwrap_err().to_string();
    assert!(err.contains("channels"), "{err}");
}

#[test]
fn errors_name_the_offending_field() {
    let mut cfg = short_frame();
    cfg.channels[1].rate = -5.0;
    assert!(config_error(&cfg).contains("channels[1].rate"));

    let mut cfg = short_frame();
    cfg.channels[1].id = cfg.channels[0].id.clone();
    assert!(config_error(&cfg).contains("channels[1].id"));

    let mut cfg = short_frame();
    cfg.baselines.as_mut().unwrap().acceleration = "nope".into();
    assert!(config_error(&cfg).contains("baselines.acceleration"));

    let mut cfg = short_frame();
    cfg.seeds.clear();
    assert!(config_error(&cfg).contains("seeds"));

    let mut cfg = short_frame();
    cfg.filter.estimate = Some(vec!["k9".into()]);
    assert!(config_error(&cfg).contains("k9"));

    let mut cfg = short_frame();
    cfg.channels[0].dof = Some(7);
    assert!(config_error(&cfg).contains(&cfg.channels[0].id));

    let text = PRESETS[0]
        .1
        .replace("duration = 30.0", "duration = 30.0\nduratoin = 1.0");
    let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
    assert!(err.contains("duratoin"), "{err}");
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "summary.txt" {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn identical_seeds_give_identical_files() {
    let cfg = short_frame();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(
        &cfg,
        &RunOptions {
            out_dir: Some(a.path().into()),
            threads: Some(1),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let rb = run_experiment(
        &cfg,
        &RunOptions {
            out_dir: Some(b.path().into()),
            threads: Some(2),
            ..RunOptions::default()
        },
    )
    .unwrap();
    for (x, y) in ra.seeds.iter().zip(&rb.seeds) {
        assert_eq!(x.metrics, y.metrics);
    }
    let ta = read_tree(a.path());
    assert!(ta.iter().any(|(n, _)| n.ends_with("summary.csv")));
    assert!(ta.iter().any(|(n, _)| n.ends_with("trace.csv")));
    assert_eq!(ta, read_tree(b.path()));

    let other = run_experiment(
        &cfg,
        &RunOptions {
            seeds: Some(vec![3]),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_ne!(other.seeds[0].metrics, ra.seeds[0].metrics);
}

proptest! {
    #[test]
    fn rms_error_matches_direct_sum(seed in any::<u64>(), n in 1usize..200) {
        let mut r = rng(seed);
        let t: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = t.iter().map(|x| x + r.random_range(-0.1..0.1)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..n {
            num += (e[k] - t[k]).powi(2) / n as f64;
            den += t[k].powi(2) / n as f64;
        }
        let expected = 100.0 * num.sqrt() / den.sqrt();
        let got = rms_error_percent(&e, &t).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1e-300));
        prop_assert!(got >= 0.0);
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strucfuse"))
}

#[test]
fn cli_lists_validates_and_runs() {
    let out = cli().arg("list-presets").output().unwrap();
    assert!(out.status.success());
    let names = String::from_utf8(out.stdout).unwrap();
    assert_eq!(names.lines().count(), PRESETS.len());

    assert!(cli()
        .args(["validate", "truss_fused"])
        .output()
        .unwrap()
        .status
        .success());

    let dir = tempfile::tempdir().unwrap();
    let mut bad = short_frame();
    bad.channels[0].noise = -1.0;
    let bad_path = dir.path().join("bad.toml");
    fs::write(&bad_path, bad.to_toml().unwrap()).unwrap();
    let out = cli().arg("validate").arg(&bad_path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("channels[0].noise"));

    let good_path = dir.path().join("short.toml");
    fs::write(&good_path, short_frame().to_toml().unwrap()).unwrap();
    let out_dir = dir.path().join("results");
    let out = cli()
        .arg("run")
        .arg(&good_path)
        .args(["--seed", "7", "--threads", "1"])
        .env("STRUCFUSE_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("frame_500_50/summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().ends_with("seed_7"));
    assert!(out_dir.join("frame_500_50/seed_7/trace.csv").is_file());

    assert!(!cli().args(["run", "no_such_preset"]).output().unwrap().status.success());
}

#[test]
fn same_rate_and_multi_rate_runs_agree_on_parameters() {
    let mut multi = preset("frame_500_50").unwrap();
    multi.duration = 10.0;
    multi.seeds = vec![1, 2, 3];
    multi.baselines = None;
    let mut same = multi.clone();
    let disp = same.channels.iter_mut().find(|c| c.id == "disp1").unwrap();
    disp.rate = 500.0;
    let a = run_experiment(&multi, &RunOptions::default()).unwrap();
    let b = run_experiment(&same, &RunOptions::default()).unwrap();
    for name in a
        .metric_names()
        .into_iter()
        .filter(|n| n.starts_with("parameter_ratio."))
    {
        let (ra, rb) = (a.median(name), b.median(name));
        assert!(
            (ra - 1.0).abs() <= 0.1 && (rb - 1.0).abs() <= 0.1,
            "{name}: {ra} vs {rb}"
        );
    }
}

#[test]
#[ignore = "acceleration-only truss estimates stay within 1% of truth in this reproduction; see README"]
fn acceleration_only_truss_leaves_some_ratio_outside_band() {
    let cfg = preset("truss_acc_only").unwrap();
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let outside = report
        .metric_names()
        .into_iter()
        .filter(|n| n.starts_with("parameter_ratio.EA"))
        .any(|n| !(0.65..=1.35).contains(&report.median(n)));
    assert!(outside);
}
