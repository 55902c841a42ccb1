use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asyncsgd"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("asyncsgd-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(dir).args(args).output().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const SERIAL: &str = r#"{
  "seed": 4,
  "objective": {"family": "quadratic", "dim": 4, "lambda_min": 1.0, "lambda_max": 2.0},
  "workers": [{"count": 1, "compute": {"kind": "constant", "delta": 1.0}}],
  "stepsize": {"kind": "constant", "eta": 0.1},
  "stop": {"kind": "iterations", "t": 200}
}"#;

#[test]
fn serial_preset_has_no_delay() {
    let dir = scratch("serial");
    let out = run_in(&dir, &["simulate", "--preset", "serial"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(dir.join("metrics.json"));
    assert_eq!(m["tau_avg"], 0.0);
    assert_eq!(m["remark5"]["pass"], true);
    let csv = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,worker,client,tau,eta,grad_norm,f_value,sim_time,selected,concurrency\n"));
    assert_eq!(csv.lines().count(), 1001);
    assert!(std::fs::read_to_string(dir.join("report.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn two_worker_preset_reports_slow_factor_as_max_delay() {
    let dir = scratch("two");
    let out = run_in(&dir, &["simulate", "--preset", "two-worker"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(dir.join("metrics.json"))["tau_max"], 8);
}

#[test]
fn config_file_runs_and_round_trips() {
    let dir = scratch("file");
    let cfg = write_config(&dir, SERIAL);
    let out = run_in(&dir, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = bin().args(["simulate", "--config", cfg.to_str().unwrap(), "--print-config"]).output().unwrap();
    let text = String::from_utf8(printed.stdout).unwrap();
    let again = write_config(&dir, &text);
    let reprinted = bin().args(["simulate", "--config", again.to_str().unwrap(), "--print-config"]).output().unwrap();
    assert_eq!(String::from_utf8(reprinted.stdout).unwrap(), text);
}

#[test]
fn invalid_config_names_the_field() {
    let dir = scratch("invalid");
    let cfg = write_config(&dir, &SERIAL.replace("\"eta\": 0.1", "\"eta\": -1.0"));
    let out = run_in(&dir, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepsize"), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = write_config(&dir, &SERIAL.replace("\"seed\"", "\"sead\""));
    let out = run_in(&dir, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sead"));
}

#[test]
fn unreached_accuracy_exits_two() {
    let dir = scratch("nc");
    let body = SERIAL.replace(
        r#"{"kind": "iterations", "t": 200}"#,
        r#"{"kind": "grad_norm", "eps": 1e-30, "max_iter": 20}"#,
    );
    let cfg = write_config(&dir, &body);
    let out = run_in(&dir, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(dir.join("metrics.json"))["status"], "not_converged");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["simulate"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["simulate", "--preset", "nope"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["frobnicate"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["--help"]).output().unwrap().status.code(), Some(0));
}

#[test]
fn verify_passes_and_detects_injected_faults() {
    let dir = scratch("verify");
    let out = run_in(&dir, &["verify", "--fuzz", "60"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(json(dir.join("verify.json"))["passed"], true);

    let out = run_in(&dir, &["verify", "--fuzz", "60", "--inject", "tie-break"]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(dir.join("verify.json"));
    let status = |name: &str| {
        report["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()["pass"].clone()
    };
    assert_eq!(status("conservation_fuzz"), true);
    assert_eq!(status("determinism"), false);

    let out = run_in(&dir, &["verify", "--fuzz", "60", "--inject", "delay-off-by-one"]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(dir.join("verify.json"));
    let check = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "conservation_fuzz").unwrap().clone();
    assert_eq!(check["pass"], false);
    assert!(check["detail"].as_str().unwrap().contains("lhs="));
}

#[test]
fn speedup_reports_mixed_fleet() {
    let dir = scratch("speedup");
    let out = run_in(&dir, &["speedup", "--fleet", "900x10,100x60", "--tau-c", "10", "--samples", "50000"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(dir.join("speedup.json"));
    assert_eq!(r["async_time"], 15.0);
    let m = r["minibatch_time"].as_f64().unwrap();
    assert!((42.4..=42.7).contains(&m));
    let alphas = std::fs::read_to_string(dir.join("alphas.csv")).unwrap();
    assert_eq!(alphas.lines().count(), 1001);

    let deltas = dir.join("deltas.txt");
    std::fs::write(&deltas, "3\n1\n").unwrap();
    let out = run_in(&dir, &["speedup", "--deltas-file", deltas.to_str().unwrap(), "--tau-c", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(dir.join("speedup.json"))["minibatch_time"], 2.5);
}

#[test]
fn scaling_rejects_noise_and_ignores_point_order() {
    let dir = scratch("scaling");
    let body = r#"{
      "seed": 2,
      "objective": {"family": "quadratic", "dim": 4, "lambda_min": 1.0, "lambda_max": 2.0},
      "noise": {"sigma": 0.1},
      "workers": [{"count": 2, "compute": {"kind": "constant", "delta": 1.0}}],
      "tune": {},
      "stop": {"kind": "last_k", "eps": 1e-10, "k": 30, "max_iter": 100000}
    }"#;
    let cfg = write_config(&dir, body);
    let out = run_in(&dir, &["scaling", "--config", cfg.to_str().unwrap(), "--slow-factors", "1,2,4"]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = write_config(&dir, &body.replace("0.1}", "0.0}"));
    let a = scratch("scaling-a");
    let b = scratch("scaling-b");
    assert_eq!(run_in(&a, &["scaling", "--config", cfg.to_str().unwrap(), "--slow-factors", "1,2,4,8"]).status.code(), Some(0));
    assert_eq!(run_in(&b, &["scaling", "--config", cfg.to_str().unwrap(), "--slow-factors", "8,2,4,1"]).status.code(), Some(0));
    for f in ["scaling.json", "scaling.csv", "scaling.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let r = json(a.join("scaling.json"));
    let fit = &r["fit"];
    let r2 = fit["r_squared"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&r2));
    assert_eq!(r["points"].as_array().unwrap().len(), 4);
}

#[test]
fn compare_and_tune_write_their_reports() {
    let dir = scratch("compare");
    let out = run_in(&dir, &["compare", "--preset", "straggler", "--adaptive-mode", "drop"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(dir.join("compare.json"));
    let res = r["results"].as_array().unwrap();
    assert_eq!(res.len(), 3);
    let time = |name: &str| res.iter().find(|p| p["policy"] == name).unwrap()["sim_time"].as_f64().unwrap();
    assert!(time("async") < time("minibatch"));
    let curves = std::fs::read_to_string(dir.join("compare_curves.csv")).unwrap();
    assert!(curves.starts_with("policy,t,sim_time,grad_norm\n"));

    let out = run_in(&dir, &["tune", "--preset", "serial"]);
    assert_eq!(out.status.code(), Some(0));
    let t = json(dir.join("tune.json"));
    assert_eq!(t["grid"].as_array().unwrap().len(), 29);
    assert!(t["best_eta"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_flag_changes_random_outputs() {
    let a = scratch("seed-a");
    let b = scratch("seed-b");
    let cfg_dir = scratch("seed-cfg");
    let cfg = write_config(&cfg_dir, &SERIAL.replace("\"seed\": 4,", "\"seed\": 4, \"noise\": {\"sigma\": 0.5},"));
    run_in(&a, &["--seed", "1", "simulate", "--config", cfg.to_str().unwrap()]);
    run_in(&b, &["--seed", "2", "simulate", "--config", cfg.to_str().unwrap()]);
    assert_ne!(std::fs::read(a.join("trace.csv")).unwrap(), std::fs::read(b.join("trace.csv")).unwrap());
}
