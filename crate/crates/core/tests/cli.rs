//! End-to-end checks of the `parkrl` binary: exit codes, the train/eval
//! pipeline, compare output, and trajectory export.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn parkrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parkrl"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_smoke_config(dir: &Path, algorithm: &str, total_steps: u64, seed: u64) -> PathBuf {
    let cfg = serde_json::json!({
        "schema_version": 1,
        "algorithm": algorithm,
        "reward": "mar",
        "total_steps": total_steps,
        "n_envs": 1,
        "master_seed": seed,
        "layout": "default",
        "out_dir": dir.join("runs").to_string_lossy(),
        "offpom": {"warmup_steps": 500, "batch_size": 64, "update_every": 8}
    });
    let path = dir.join(format!("smoke_{algorithm}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_flags_are_usage_errors_on_stderr() {
    let out = parkrl().arg("train").arg("--bogus").output().unwrap();
    assert_code(&out, 1);
    assert!(!out.stderr.is_empty());

    let out = parkrl().arg("not-a-subcommand").output().unwrap();
    assert_code(&out, 1);
}

#[test]
fn validate_config_accepts_shipped_configs() {
    for name in [
        "onpom_mar.json",
        "onpom_gor.json",
        "onpom_dpr.json",
        "offpom_mar.json",
        "offpom_gor.json",
        "offpom_dpr.json",
        "all_cells.json",
    ] {
        let out = parkrl()
            .arg("validate-config")
            .arg(configs_dir().join(name))
            .output()
            .unwrap();
        assert_code(&out, 0);
    }
}

#[test]
fn validate_config_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"schema_version\": 99}").unwrap();
    let out = parkrl().arg("validate-config").arg(&bad).output().unwrap();
    assert_code(&out, 1);

    let missing = dir.path().join("nope.json");
    let out = parkrl().arg("validate-config").arg(&missing).output().unwrap();
    assert_code(&out, 1);
}

#[test]
fn train_then_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke_config(dir.path(), "onpom", 2000, 9);

    let out = parkrl().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert_code(&out, 0);

    let run_dir = dir.path().join("runs/onpom-mar-9");
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    // 2000 steps at stride 2000 -> header + exactly one row.
    assert_eq!(metrics.lines().count(), 2);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["status"], "ok");

    let json_out = dir.path().join("eval.json");
    let out = parkrl()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run_dir.join("final.ckpt.json"))
        .arg("--episodes")
        .arg("5")
        .arg("--deterministic")
        .arg("--json")
        .arg(&json_out)
        .output()
        .unwrap();
    assert_code(&out, 0);
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    let total = eval["success_rate"].as_f64().unwrap()
        + eval["collision_rate"].as_f64().unwrap()
        + eval["truncation_rate"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn compare_identical_files_reports_zero_t() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let mut text =
        String::from("train_step,mean_episode_reward,policy_loss,value_loss,entropy,success_rate_window\n");
    for k in 1..=6 {
        text.push_str(&format!("{},{},0,0,0,0\n", k * 2000, (k % 3) as f64));
    }
    std::fs::write(&m, text).unwrap();
    let out = parkrl()
        .arg("compare")
        .arg("--a")
        .arg(&m)
        .arg("--b")
        .arg(&m)
        .arg("--stride")
        .arg("2000")
        .output()
        .unwrap();
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let json_line = stdout.lines().last().unwrap();
    let r: serde_json::Value = serde_json::from_str(json_line).unwrap();
    assert_eq!(r["t_statistic"].as_f64().unwrap(), 0.0);
    assert_eq!(r["cohens_d"].as_f64().unwrap(), 0.0);
}

#[test]
fn export_traj_writes_trace_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke_config(dir.path(), "onpom", 2000, 11);
    assert_code(&parkrl().arg("train").arg("--config").arg(&cfg).output().unwrap(), 0);

    let ckpt = dir.path().join("runs/onpom-mar-11/final.ckpt.json");
    let traj = dir.path().join("traj.csv");
    let out = parkrl()
        .arg("export-traj")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--episodes")
        .arg("2")
        .arg("--out")
        .arg(&traj)
        .arg("--deterministic")
        .output()
        .unwrap();
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("episode,step,x,z,heading_deg,steer_deg,action,reward,terminal"));
    assert!(text.lines().count() > 3);
}

#[test]
fn seed_env_var_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke_config(dir.path(), "onpom", 2000, 1);
    let out = parkrl()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--seed")
        .arg("5")
        .env("PARKRL_SEED", "33")
        .output()
        .unwrap();
    assert_code(&out, 0);
    assert!(dir.path().join("runs/onpom-mar-33").exists());
    assert!(!dir.path().join("runs/onpom-mar-5").exists());
}

#[test]
fn train_override_flag_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke_config(dir.path(), "onpom", 4000, 2);
    let out = parkrl()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--override")
        .arg("total_steps=2000")
        .arg("--override")
        .arg("reward=gor")
        .output()
        .unwrap();
    assert_code(&out, 0);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs/onpom-gor-2/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["env_steps"], 2000);
}

#[test]
fn batch_file_runs_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    // Two tiny cells driven from one batch file.
    let mut runs = vec![];
    for (algo, reward) in [("onpom", "gor"), ("onpom", "dpr")] {
        let cfg = serde_json::json!({
            "schema_version": 1,
            "algorithm": algo,
            "reward": reward,
            "total_steps": 2000,
            "n_envs": 1,
            "master_seed": 4,
            "layout": "default",
            "out_dir": dir.path().join("runs").to_string_lossy(),
        });
        let p = dir.path().join(format!("{algo}_{reward}.json"));
        std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
        runs.push(format!("{algo}_{reward}.json"));
    }
    let batch = dir.path().join("batch.json");
    std::fs::write(&batch, serde_json::to_string(&serde_json::json!({ "runs": runs })).unwrap())
        .unwrap();
    let out = parkrl().arg("train").arg("--config").arg(&batch).output().unwrap();
    assert_code(&out, 0);
    assert!(dir.path().join("runs/onpom-gor-4/final.ckpt.json").exists());
    assert!(dir.path().join("runs/onpom-dpr-4/final.ckpt.json").exists());
}
