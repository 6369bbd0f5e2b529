use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pathmfc_cli::config::{ExperimentConfig, DEFAULT_CONFIG};
use serde_json::Value;

fn pathmfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathmfc"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn default_config_round_trips_through_toml_and_json() {
    let cfg = ExperimentConfig::from_toml(DEFAULT_CONFIG).unwrap();
    let again = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(
        serde_json::to_value(&cfg).unwrap(),
        serde_json::to_value(&again).unwrap()
    );
    let echoed: ExperimentConfig =
        serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
    assert_eq!(
        toml::to_string(&cfg).unwrap(),
        toml::to_string(&echoed).unwrap()
    );
}

#[test]
fn unknown_key_exits_2_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "seed = 1\n[model]\nbogus = 3\n");
    let out = pathmfc(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
}

#[test]
fn malformed_toml_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "seed = \n");
    let out = pathmfc(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "seed = 1\n[model]\ntag = \"ou\"\nparams = { nope = 1.0 }\n",
    );
    assert_eq!(
        pathmfc(&["simulate", "--config", &cfg]).status.code(),
        Some(2)
    );
    let cfg = write(dir.path(), "steps.toml", "seed = 1\n[model]\nsteps = 0\n");
    assert_eq!(
        pathmfc(&["simulate", "--config", &cfg]).status.code(),
        Some(2)
    );
}

#[test]
fn blowup_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "blow.toml",
        "seed = 5\n[model]\ntag = \"linear_growth\"\nparams = { kappa = 1e10 }\n\
         [simulate]\ninit = { kind = \"constant\", value = [1.0] }\n",
    );
    let out = pathmfc(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blow-up"));
}

#[test]
fn frozen_simulation_writes_constant_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "frozen.toml",
        "seed = 5\n[model]\ntag = \"frozen\"\nsteps = 10\nparams = { dim = 2 }\n\
         [simulate]\nparticles = 3\ninit = { kind = \"constant\", value = [1.0, -2.0] }\nexport = true\n",
    );
    let out_dir = dir.path().join("out");
    let out = pathmfc(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mean = read_csv(&out_dir.join("mean_path.csv"));
    assert_eq!(mean.len(), 11);
    assert!(mean.iter().all(|r| r[1] == 1.0 && r[2] == -2.0));
    for i in 0..3 {
        let rows = read_csv(&out_dir.join("paths").join(format!("particle_{i:05}.csv")));
        assert!(rows.iter().all(|r| r[1] == 1.0 && r[2] == -2.0));
    }
}

#[test]
fn yosida_ladder_distances_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let out = pathmfc(&["yosida-converge", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(dir.path());
    let d: Vec<f64> = r["checks"][0]["metrics"]["distances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(d.len(), 3);
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    let rows = read_csv(&dir.path().join("yosida.csv"));
    assert_eq!(
        rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        vec![2.0, 8.0, 32.0]
    );
}

#[test]
fn seed_flag_overrides_and_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = pathmfc(&[
            "picard",
            "--seed",
            "99",
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let mut r = report(&out_dir);
        r.as_object_mut().unwrap().remove("wall_time_seconds");
        r
    };
    let a = run("a", "1");
    let b = run("b", "3");
    assert_eq!(a["seed"], 99);
    assert_eq!(a["config"]["seed"], 99);
    assert_eq!(a, b);
    // the echoed config parses back into a config
    let echoed: ExperimentConfig = serde_json::from_value(a["config"].clone()).unwrap();
    assert_eq!(echoed.seed, 99);
}
