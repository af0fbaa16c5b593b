use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meaflow::measures::ParticleMeasure;
use serde_json::{json, Value};

fn meaflow(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_meaflow"));
    cmd.args(args).env_remove("MEAFLOW_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn zero_signal_problem() -> Value {
    json!({
        "family": {"kind": "sparse_deconvolution", "order": 7},
        "lambda": 1.0,
        "data": {"source": "signal", "values": vec![0.0; 256]}
    })
}

fn small_run(seed: Option<u64>) -> Value {
    let mut config = json!({
        "problem": {
            "family": {"kind": "sparse_deconvolution"},
            "lambda": 3.0,
            "data": {"source": "teacher", "teacher_size": 3, "noise": 0.001}
        },
        "init": {"kind": "grid_on_zero_slice", "m": 8},
        "integrator": {"max_steps": 200, "snapshots": false}
    });
    if let Some(s) = seed {
        config["seed"] = json!(s);
    }
    config
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn negative_dt_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run(Some(0));
    config["integrator"]["dt"] = json!({"kind": "fixed", "dt": -0.1});
    let path = write_json(dir.path(), "run.json", &config);
    let out = meaflow(&["run", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(code(&out), 64, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_key_names_its_location() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run(Some(0));
    config["integrator"]["step_size"] = json!(0.1);
    let path = write_json(dir.path(), "run.json", &config);
    let out = meaflow(&["run", path.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 64);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step_size") && err.contains("run.json:"), "{err}");
}

#[test]
fn missing_seed_is_rejected_unless_given_on_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_json(dir.path(), "run.json", &small_run(None));
    let out_dir = dir.path().join("o");
    let out = meaflow(&["run", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 64);
    let out = meaflow(&["run", path.to_str().unwrap(), "--seed", "4", "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["seed"], json!(4));
}

#[test]
fn usage_errors_are_configuration_errors() {
    assert_eq!(code(&meaflow(&["run"], &[])), 64);
    assert_eq!(code(&meaflow(&["frobnicate"], &[])), 64);
    assert_eq!(code(&meaflow(&["--help"], &[])), 0);
}

#[test]
fn zero_steps_writes_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run(Some(1));
    config["integrator"]["max_steps"] = json!(0);
    let path = write_json(dir.path(), "run.json", &config);
    let out_dir = dir.path().join("o");
    let out = meaflow(&["run", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    let mu = ParticleMeasure::load(&out_dir.join("final_measure.json")).unwrap();
    assert_eq!(mu.len(), 8);
    assert!(mu.position_rows().all(|u| u[0] == 0.0));
    for name in ["certificate.json", "config.json", "energy.csv", "trajectory.json"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
}

#[test]
fn environment_overrides_configured_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run(Some(2));
    config["output"] = json!({"directory": dir.path().join("configured")});
    let path = write_json(dir.path(), "run.json", &config);
    let env_dir = dir.path().join("from_env");
    let out = meaflow(&["run", path.to_str().unwrap()], &[("MEAFLOW_OUT", &env_dir)]);
    assert_eq!(code(&out), 0);
    assert!(env_dir.join("final_measure.json").exists());
    assert!(!dir.path().join("configured").exists());
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run(Some(0));
    config["integrator"]["dt"] = json!({"kind": "fixed", "dt": 1000.0});
    let path = write_json(dir.path(), "run.json", &config);
    let out = meaflow(&["run", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn require_optimal_fails_on_a_stuck_state() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/deconv_fig2_m6.json");
    let out_dir = dir.path().join("o");
    let out = meaflow(
        &["run", config.to_str().unwrap(), "--require-optimal", "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&out), 3);
    let cert: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["pass"], json!(false));
}

#[test]
fn certify_zero_signal() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_json(dir.path(), "problem.json", &zero_signal_problem());
    let mu = ParticleMeasure::uniform(vec![vec![0.0, 0.1], vec![0.0, 0.6]]).unwrap();
    let measure = dir.path().join("mu.csv");
    mu.save(&measure).unwrap();
    let out_dir = dir.path().join("cert");
    let out = meaflow(
        &["certify", measure.to_str().unwrap(), problem.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("pass: grid_min = 1.000000e0"), "{}", stdout(&out));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("certificate.json")).unwrap()).unwrap();
    assert!((report["grid_min"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn certify_reports_failure_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (0..256)
        .map(|k| 20.0 * meaflow::problems::dirichlet_kernel(7, k as f64 / 256.0 - 0.3))
        .collect();
    let mut problem = zero_signal_problem();
    problem["data"]["values"] = json!(values);
    let problem = write_json(dir.path(), "problem.json", &problem);
    let measure = dir.path().join("mu.json");
    ParticleMeasure::uniform(vec![vec![0.0, 0.5]]).unwrap().save(&measure).unwrap();
    let out = meaflow(&["certify", measure.to_str().unwrap(), problem.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).starts_with("fail"));
}

#[test]
fn distance_of_a_measure_to_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.csv");
    let mu = ParticleMeasure::uniform(vec![vec![0.3, 1.0], vec![-2.0, 0.5], vec![1.5, 0.25]]).unwrap();
    mu.save(&a).unwrap();
    mu.save(&b).unwrap();
    let out = meaflow(&["distance", a.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "0.0");
    assert_eq!(code(&meaflow(&["distance", a.to_str().unwrap(), "/nonexistent.json"], &[])), 64);
}

#[test]
fn gradient_check_passes_on_bundled_problems() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["sigmoid_logistic.json", "deconv_fig2_m10.json", "relu_fig3_m100.json"] {
        let out = meaflow(&["check-grad", configs.join(name).to_str().unwrap(), "--points", "50"], &[]);
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).starts_with("max relative error"));
    }
}

#[test]
fn bench_writes_sweep_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "problem": {
            "family": {"kind": "sparse_deconvolution"},
            "lambda": 3.0,
            "data": {"source": "teacher", "teacher_size": 3, "noise": 0.001}
        },
        "m_values": [4, 8],
        "seeds": [0, 1],
        "integrator": {"max_steps": 300, "snapshots": false},
        "output": {"directory": "ignored"}
    });
    let path = write_json(dir.path(), "bench.json", &config);
    let out_dir = dir.path().join("o");
    let out = meaflow(&["bench", path.to_str().unwrap(), "--seed", "5", "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "family,method,m,seed,excess_loss,wallclock_ms,certified");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("5")));
    assert!(out_dir.join("summary.json").exists());
}
