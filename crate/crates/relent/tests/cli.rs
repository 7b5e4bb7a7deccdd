use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relent::config::{parse_config, RunConfig};
use relent::output::{read_checkpoint, run_dir};
use serde_json::{json, Value};

fn relent(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relent"));
    cmd.args(args).env_remove("RELENT_SEED");
    if let Some(s) = env_seed {
        cmd.env("RELENT_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string(cfg).unwrap()).unwrap();
    p
}

fn run(kind: &str, dir: &Path, cfg: &Value, jobs: &str) -> (Output, PathBuf) {
    let p = write_config(dir, cfg);
    let out = dir.join("out");
    let o = relent(&[kind, "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs], None);
    let run_dir = fs::read_dir(&out).ok().and_then(|mut d| d.next()).map(|e| e.unwrap().path()).unwrap_or(out);
    (o, run_dir)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn energy_at_equilibrium_exits_zero_with_constant_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": {"kind": "energy", "t_end": 0.01},
        "grid": {"n": 16},
        "initial": {"density": [], "velocity_mean": [0.3, 0.0]},
        "stepper": {"wiener_dt": 1e-4},
        "ledger_every": 10
    });
    let (o, dir) = run("energy", tmp.path(), &cfg, "2");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = dir.join("ledger_n16_m0000.csv");
    let total = column(&ledger, "total");
    assert!(total.len() > 2);
    assert!(total.iter().all(|&e| e == total[0]), "{total:?}");
    assert!(column(&ledger, "mass").iter().all(|&m| m == 2.0));
    let script = fs::read_to_string(dir.join("plot.gp")).unwrap();
    assert!(script.contains("stats_n16.csv") && dir.join("stats_n16.csv").is_file());
    assert!(dir.join("resolutions.csv").is_file() && dir.join("config.json").is_file());
}

#[test]
fn identical_twins_exit_zero_with_vanishing_relative_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": {"kind": "twin", "t_end": 0.05, "n_members": 2},
        "grid": {"n": 32},
        "noise": {"modes": 2, "f": [0.1, 0.05], "h": [0.05, 0.02]},
        "stepper": {"wiener_dt": 1e-4},
        "ledger_every": 50
    });
    let (o, dir) = run("twin", tmp.path(), &cfg, "2");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for m in 0..2 {
        let rel = column(&dir.join(format!("ledger_twin_m{m:04}.csv")), "rel_energy");
        assert!(!rel.is_empty());
        assert!(rel.iter().all(|&r| r.abs() <= 1e-10), "{rel:?}");
    }
}

#[test]
fn decoupled_twins_fail_the_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": {"kind": "twin", "t_end": 0.05, "twin": {"decouple": true}},
        "grid": {"n": 32},
        "noise": {"modes": 2, "f": [0.1, 0.05], "h": [0.05, 0.02]},
        "stepper": {"wiener_dt": 1e-4},
        "ledger_every": 50
    });
    let (o, _) = run("twin", tmp.path(), &cfg, "2");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn density_floor_breach_exits_three_with_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": {"kind": "energy", "t_end": 0.5, "seed": 4},
        "grid": {"n": 32},
        "noise": {"modes": 2, "f": [400.0, 400.0], "h": [0.0, 0.0]},
        "stepper": {"wiener_dt": 1e-4, "fixed_base_steps": 1, "rho_floor": 0.05},
        "ledger_every": 1
    });
    let (o, dir) = run("energy", tmp.path(), &cfg, "2");
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(3), "{stderr}");
    assert!(stderr.contains("below floor"), "{stderr}");
    let (state, meta) = read_checkpoint(&dir.join("checkpoint_m0000.bin")).unwrap();
    assert_eq!(meta.seed, 4);
    assert_eq!(meta.member, 0);
    assert!(meta.step > 0);
    assert_eq!(state.t, meta.t);
    assert!(state.rho.data().iter().all(|&r| r >= 0.05));
    assert!(meta.reason.unwrap().contains("below floor"));
    let ledger = column(&dir.join("ledger_failed_m0000.csv"), "t");
    assert_eq!(*ledger.last().unwrap(), meta.t);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = relent(&["energy", "--config", "/nonexistent/relent.json"], None);
    assert_eq!(missing.status.code(), Some(1));
    let bad = write_config(tmp.path(), &json!({"params": {"gamma": 1.2}}));
    let o = relent(&["energy", "--config", bad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma > 3/2"));
    let unknown = write_config(tmp.path(), &json!({"grid": {"cells": 8}}));
    let o = relent(&["energy", "--config", unknown.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cells"));
    let p = write_config(tmp.path(), &json!({}));
    let o = relent(&["energy", "--config", p.to_str().unwrap()], Some("many"));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(relent(&["energy", "--config", "a", "--config", "b"], None).status.code(), Some(1));
    assert_eq!(relent(&["energy"], None).status.code(), Some(1));
    assert_eq!(relent(&["bogus"], None).status.code(), Some(1));
    assert_eq!(relent(&["--help"], None).status.code(), Some(0));
}

#[test]
fn seed_precedence_flag_over_environment_over_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": {"seed": 1}, "output_dir": tmp.path().join("o")});
    let p = write_config(tmp.path(), &cfg);
    let seed_of = |args: &[&str], env: Option<&str>| {
        let mut a = vec!["coercivity", "--config", p.to_str().unwrap()];
        a.extend_from_slice(args);
        let o = relent(&a, env);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let dirs: Vec<PathBuf> = fs::read_dir(tmp.path().join("o")).unwrap().map(|e| e.unwrap().path()).collect();
        let newest = dirs.into_iter().max_by_key(|d| fs::metadata(d.join("summary.json")).unwrap().modified().unwrap());
        let cfg: RunConfig = parse_config(&fs::read_to_string(newest.unwrap().join("config.json")).unwrap()).unwrap();
        cfg.experiment.seed
    };
    assert_eq!(seed_of(&[], None), 1);
    assert_eq!(seed_of(&[], Some("5")), 5);
    assert_eq!(seed_of(&["--seed", "9"], Some("5")), 9);
}

#[test]
fn reruns_overwrite_the_same_directory_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": {"kind": "energy", "t_end": 0.02, "n_members": 3},
        "grid": {"n": 16},
        "noise": {"modes": 2, "f": [0.1, 0.05], "h": [0.05, 0.02]},
        "stepper": {"wiener_dt": 1e-4},
        "ledger_every": 20
    });
    let (a, dir_a) = run("energy", tmp.path(), &cfg, "3");
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let first = fs::read(dir_a.join("ledger_n16_m0002.csv")).unwrap();
    let (b, dir_b) = run("energy", tmp.path(), &cfg, "1");
    assert_eq!(b.status.code(), a.status.code());
    assert_eq!(dir_a, dir_b);
    assert_eq!(fs::read(dir_b.join("ledger_n16_m0002.csv")).unwrap(), first);
    let parsed: RunConfig = parse_config(&fs::read_to_string(dir_a.join("config.json")).unwrap()).unwrap();
    assert_eq!(run_dir(&parsed).file_name(), dir_a.file_name());
}

#[test]
fn published_schema_matches_the_configuration_type() {
    let o = relent(&["schema"], None);
    assert_eq!(o.status.code(), Some(0));
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    let published: Value =
        serde_json::from_str(&fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/config.schema.json")).unwrap())
            .unwrap();
    assert_eq!(printed, published);
}
