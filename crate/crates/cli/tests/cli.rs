use std::path::Path;
use std::process::{Command, Output};

fn mimic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimic")).args(args).env("MM_THREADS", "1").output().expect("spawn mimic")
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(
        &p,
        r#"model = "arm2"
clips = ["preset:arm2_reach"]
total_steps = 64

[ppo]
n_env = 4
rollout_steps = 8
minibatches = 2
seed = 11

[policy]
actor_widths = [8, 8]
critic_widths = [8, 8]
init_std = 0.2
"#,
    )
    .unwrap();
    p
}

#[test]
fn missing_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mimic(&["train", "--config", "/nonexistent/cfg.toml", "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "model = \"arm2\"\nbogus = 1\n").unwrap();
    let out = mimic(&["train", "--config", p.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_two_iterations_then_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = mimic(&["train", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a");
    let csv = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header + 2 rows:\n{csv}");
    for f in ["manifest.json", "config.toml", "final.json", "final.bin"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["model_hash"].as_str().unwrap().len(), 64);

    let b = run("b");
    assert_eq!(std::fs::read(a.join("final.bin")).unwrap(), std::fs::read(b.join("final.bin")).unwrap());

    // the trained checkpoint evaluates
    let ck = a.join("final");
    let out = mimic(&["eval", "--checkpoint", ck.to_str().unwrap(), "--clip", "preset:arm2_reach", "--json", "-"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(rep["frame_coverage"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_oracle_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = mimic(&["eval", "--oracle", "--clip", "preset:arm2_reach", "--json", "-", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["success_rate"].as_f64(), Some(100.0));
    assert_eq!(rep["frame_coverage"].as_f64(), Some(100.0));
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 3);
}

#[test]
fn eval_missing_checkpoint_is_usage_error() {
    let out = mimic(&["eval", "--checkpoint", "/nonexistent/final", "--clip", "preset:arm2_reach"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn audit_in_range_clip() {
    let out = mimic(&["audit", "--clip", "preset:arm2_reach", "--reference", "preset:arm2_reach"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 1);
}

#[test]
fn convert_resamples() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("half");
    let out = mimic(&["convert", "--input", "preset:arm2_reach", "--output", stem.to_str().unwrap(), "--rate", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = mimic(&["eval", "--oracle", "--clip", stem.with_extension("json").to_str().unwrap(), "--json", "-"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gait_oracle_finds_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let out = mimic(&["gait", "--oracle", "--clip", "preset:walker_gait", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["n_cycles"].as_u64().unwrap() >= 2, "{v}");
    assert!(dir.path().join("profiles.csv").is_file());
}

#[test]
fn bench_rows_per_env_count() {
    let out = mimic(&["bench", "--model", "arm2", "--n-env", "1,8", "--threads", "1", "--steps", "4", "--iters", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}
