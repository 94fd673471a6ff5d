//! End-to-end smoke tests for the `traj` binary: every stage runs on a tiny
//! dataset, file contracts hold, and failures exit nonzero with a
//! machine-readable JSON error.

use std::path::{Path, PathBuf};
use std::process::Command;

fn traj() -> Command {
    Command::new(env!("CARGO_BIN_EXE_traj"))
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    // derived from configs/base.json but shrunk for test speed
    let base = include_str!("../../../configs/base.json");
    let mut cfg: serde_json::Value = serde_json::from_str(base).unwrap();
    cfg["regime"]["n_traj"] = serde_json::json!(30);
    cfg["regime"]["rng_seed"] = serde_json::json!(12345);
    let dt = cfg["params"]["dt"].as_f64().unwrap();
    let grid: Vec<f64> = (1..=6).map(|k| k as f64 * 10.0 * dt).collect();
    cfg["t_m_grid"] = serde_json::json!(grid);
    cfg["training"] = serde_json::json!({
        "batch_size": 32,
        "split": 0.9,
        "base_lr": 2e-4,
        "max_lr": 3e-3,
        "cycle_len": 20,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_opt": 1e-8,
        "w_init": 1.0,
        "w_purity": 1.0,
        "max_epochs": 2,
        "clip_eps": 1e-7,
        "clip_norm": 5.0
    });
    cfg["network"] = serde_json::json!({"hidden_size": 6, "num_layers": 1});
    cfg["grid"] = serde_json::json!({"plane": "yz", "n_bins": 8, "min_samples": 10});
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn full_pipeline_smoke() {
    let dir = std::env::temp_dir().join(format!("traj_cli_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_tiny_config(&dir);
    let data = dir.join("data");
    let cal = dir.join("cal");
    let rec_dir = dir.join("rec");
    let lstm_dir = dir.join("lstm");
    let ana = dir.join("ana");
    let val = dir.join("val");

    run_ok(traj()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data));
    assert!(data.join("records.jsonl").exists());
    assert!(data.join("truth.jsonl").exists());
    assert!(data.join("manifest.json").exists());

    // deterministic replay: same seed, byte-identical records
    let data2 = dir.join("data2");
    run_ok(traj()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data2));
    assert_eq!(
        std::fs::read(data.join("records.jsonl")).unwrap(),
        std::fs::read(data2.join("records.jsonl")).unwrap(),
        "identical seed must replay bit-identically"
    );

    run_ok(traj()
        .args(["calibrate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&cal)
        .args(["--n", "120"]));
    assert!(cal.join("calibration.json").exists());

    run_ok(traj()
        .args(["reconstruct", "--config"])
        .arg(&config)
        .args(["--variant", "analytics", "--in"])
        .arg(data.join("records.jsonl"))
        .arg("--calibration")
        .arg(cal.join("calibration.json"))
        .arg("--truth")
        .arg(data.join("truth.jsonl"))
        .arg("--out")
        .arg(&rec_dir));
    assert!(rec_dir.join("trajectories.jsonl").exists());
    assert!(rec_dir.join("rms.csv").exists());

    run_ok(traj()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--in")
        .arg(data.join("records.jsonl"))
        .arg("--out")
        .arg(&lstm_dir));
    assert!(lstm_dir.join("model.json").exists());
    assert!(lstm_dir.join("training_log.csv").exists());

    run_ok(traj()
        .args(["reconstruct", "--config"])
        .arg(&config)
        .args(["--variant", "lstm", "--in"])
        .arg(data.join("records.jsonl"))
        .arg("--model")
        .arg(lstm_dir.join("model.json"))
        .arg("--out")
        .arg(dir.join("rec_lstm")));

    run_ok(traj()
        .args(["analyze", "--in"])
        .arg(data.join("truth.jsonl"))
        .arg("--out")
        .arg(&ana)
        .args(["--grid", "8"])
        .arg("--config")
        .arg(&config));
    for file in ["bins.csv", "drift_fit.csv", "diffusion_fit.csv", "quiver.svg", "hist.svg"] {
        assert!(ana.join(file).exists(), "missing {file}");
    }

    run_ok(traj()
        .args(["validate", "--in"])
        .arg(rec_dir.join("trajectories.jsonl"))
        .arg("--records")
        .arg(data.join("records.jsonl"))
        .arg("--out")
        .arg(&val)
        .args(["--bins", "8"]));
    assert!(val.join("validation.csv").exists());
    assert!(val.join("validation.svg").exists());

    // raw-digitizer stage on demand: acquire at dt/2, coarse-grain back
    let data_raw = dir.join("data_raw");
    run_ok(traj()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data_raw)
        .args(["--coarse", "2", "--n", "4"]));
    let raw_records = std::fs::read_to_string(data_raw.join("records.jsonl")).unwrap();
    let line = raw_records.lines().nth(1).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
    let cfg_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    assert!(
        (parsed["dt"].as_f64().unwrap() - cfg_json["params"]["dt"].as_f64().unwrap()).abs()
            < 1e-15,
        "coarse-grained records must come back at the configured dt"
    );

    // report collates runs laid out as out/<label>/{manifest.json, ...}
    let report_dir = dir.join("sweep");
    let run_dir = report_dir.join("omega_0p6");
    std::fs::create_dir_all(&run_dir).unwrap();
    for (from, to) in [
        (data.join("manifest.json"), run_dir.join("manifest.json")),
        (rec_dir.join("rms.csv"), run_dir.join("rms.csv")),
        (ana.join("drift_fit.csv"), run_dir.join("drift_fit.csv")),
        (
            ana.join("diffusion_fit.csv"),
            run_dir.join("diffusion_fit.csv"),
        ),
    ] {
        std::fs::copy(from, to).unwrap();
    }
    run_ok(traj().args(["report", "--dir"]).arg(&report_dir));
    assert!(report_dir.join("rms_vs_drive.csv").exists());
    assert!(report_dir.join("dephasing_vs_drive.csv").exists());
    assert!(report_dir.join("tilt_rate_vs_drive.csv").exists());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn stage_order_violation_yields_json_error() {
    let dir = std::env::temp_dir().join(format!("traj_cli_err_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = write_tiny_config(&dir);
    let out = traj()
        .args(["reconstruct", "--config"])
        .arg(&config)
        .args(["--variant", "standard", "--in"])
        .arg(dir.join("does_not_exist.jsonl"))
        .arg("--out")
        .arg(dir.join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("stderr must be machine-readable JSON");
    assert_eq!(parsed["kind"], "missing_input");
    assert!(parsed["error"].as_str().unwrap().contains("cannot read"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_config_yields_json_error() {
    let dir = std::env::temp_dir().join(format!("traj_cli_cfg_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("broken.json");
    std::fs::write(&config, "{\"schema_version\": 999}").unwrap();
    let out = traj()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let parsed: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(parsed["kind"].is_string());
    std::fs::remove_dir_all(&dir).ok();
}
