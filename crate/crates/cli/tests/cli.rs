use std::fs;
use std::path::Path;
use std::process::Command;

use berglab_cli::{run, Command as Stage, Envelope, ExperimentConfig};

fn berglab(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_berglab"))
        .args(args)
        .current_dir(dir)
        .env("BERGLAB_THREADS", "4")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p.display().to_string()
}

#[test]
fn moments_of_unit_weight_start_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"weight": {"family": "unit", "epsilon0": 0.5}, "moments": {"max_n": 8}}"#);
    let out = berglab(&["moments", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("o/moments.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,omega_n,log_omega_n"));
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], n.to_string());
        let v: f64 = cols[1].parse().unwrap();
        assert!((v - 1.0 / (n as f64 + 1.0)).abs() < 1e-8, "{line}");
    }
    assert!(!text.contains('\r'));
}

#[test]
fn regularize_on_exponential_lambda_passes() {
    // c = beta = 1 gives Lambda(x) = e^x.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"weight": {"family": "double_exp", "c": 1.0, "beta": 1.0, "epsilon0": 0.5}}"#,
    );
    let out = berglab(&["regularize", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let env: Envelope = serde_json::from_str(&fs::read_to_string(dir.path().join("o/regularize.report.json")).unwrap()).unwrap();
    assert!(env.reports.iter().all(|r| r.all_pass()));
    assert_eq!(env.config_hash.len(), 64);
    assert!(env.artifacts.contains_key("minorant.json"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"weigth": {}}"#);
    let out = berglab(&["moments", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));

    let cfg = write_config(dir.path(), r#"{"weight": {"family": "single_exp", "beta": 0.5, "epsilon0": 0.5}}"#);
    assert_eq!(berglab(&["moments", "--config", &cfg], dir.path()).status.code(), Some(2));

    let out = berglab(&["moments", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(berglab(&["bogus", "--config", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let out = Command::new(env!("CARGO_BIN_EXE_berglab"))
        .args(["moments", "--config", &cfg])
        .current_dir(dir.path())
        .env("BERGLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "moments": {"max_n": 8},
            "construct": {"levels": 1},
            "pair": {"levels_first": 1, "levels_second": 1},
            "checks": {"evaluator_samples": 200, "pair_degree": 10},
            "smooth": {"pairs": 300},
            "cyclicity": {"degree": 10}
        }"#,
    )
    .unwrap()
}

#[test]
fn all_pipeline_is_deterministic() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ea = run(Stage::All, &cfg, a.path()).unwrap();
    let eb = run(Stage::All, &cfg, b.path()).unwrap();
    assert_eq!(ea.len(), 7);
    assert_eq!(ea, eb);
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        let x = fs::read(a.path().join(&name)).unwrap();
        let y = fs::read(b.path().join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
    let hash = cfg.hash().unwrap();
    assert!(ea.iter().all(|e| e.config_hash == hash));
    for e in &ea {
        for (file, h) in &e.artifacts {
            let bytes = fs::read(a.path().join(file)).unwrap();
            assert_eq!(&berglab::report::content_hash(&bytes), h);
        }
    }
}

#[test]
fn config_round_trips_through_json() {
    let cfg = ExperimentConfig::default();
    let text = serde_json::to_string(&cfg).unwrap();
    let back = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(cfg, back);
    assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
    assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
}
