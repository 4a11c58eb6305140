use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_manip2nav"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn write(path: &Path, value: serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

/// Scratch directory with copies of the shipped configs, a small trainer and
/// a run config for `task` writing into `runs/`.
fn workspace(task: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in ["chain.json", "camera_desk.json", "task_reach.json", "task_door.json"] {
        fs::copy(configs().join(name), dir.path().join(name)).unwrap();
    }
    write(
        &dir.path().join("trainer.json"),
        json!({"schema": "trainer-v1", "hidden": [32], "batch_size": 16, "env_count": 1, "total_steps": 120, "seeds": [0]}),
    );
    write(
        &dir.path().join("run.json"),
        json!({
            "schema": "run-v1",
            "chain": "chain.json",
            "camera": "camera_desk.json",
            "task": format!("task_{task}.json"),
            "trainer": "trainer.json",
            "out": "runs",
            "variants": ["DDQN", "DDQN_A"],
        }),
    );
    dir
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    run(bin().arg("train").arg("--config").arg(dir.join("run.json")).args(extra))
}

#[test]
fn mapgen_writes_map_and_prior() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("map");
    let o = run(bin()
        .args(["mapgen", "--cell-size", "0.1"])
        .arg("--chain")
        .arg(configs().join("chain.json"))
        .arg("--camera")
        .arg(configs().join("camera_desk.json"))
        .arg("--task")
        .arg(configs().join("task_reach.json"))
        .arg("--out")
        .arg(&out));
    assert!(o.status.success());
    for f in ["map.json", "prior.csv", "prior_overlay.ppm"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let first = fs::read(out.join("map.json")).unwrap();
    let o = run(bin()
        .args(["mapgen", "--cell-size", "0.1"])
        .arg("--chain")
        .arg(configs().join("chain.json"))
        .arg("--camera")
        .arg(configs().join("camera_desk.json"))
        .arg("--out")
        .arg(&out));
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("map.json")).unwrap(), first);
}

#[test]
fn mapgen_unreachable_region_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .args(["mapgen", "--region", "5,5,5,5.3,5.3,5.3"])
        .arg("--chain")
        .arg(configs().join("chain.json"))
        .arg("--camera")
        .arg(configs().join("camera_desk.json"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(dir.path().join("map.json").exists());
    assert!(!dir.path().join("prior.csv").exists());
}

#[test]
fn mapgen_missing_chain_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(bin()
        .arg("mapgen")
        .arg("--chain")
        .arg(dir.path().join("missing.json"))
        .arg("--camera")
        .arg(configs().join("camera_desk.json"))
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    assert!(!out.exists());
}

#[test]
fn training_is_byte_identical_across_runs() {
    let a = workspace("reach");
    let b = workspace("reach");
    assert!(train(a.path(), &["--variant", "DDQN_A"]).status.success());
    assert!(train(b.path(), &["--variant", "DDQN_A"]).status.success());
    for f in ["qnet.bin", "log.csv", "summary.json"] {
        let rel = Path::new("runs/reach/DDQN_A/seed_0").join(f);
        assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap(), "{f}");
    }
}

#[test]
fn zero_step_training_saves_a_checkpoint() {
    let dir = workspace("reach");
    assert!(train(dir.path(), &["--variant", "DDQN", "--total-steps", "0"]).status.success());
    let run_dir = dir.path().join("runs/reach/DDQN/seed_0");
    assert!(run_dir.join("qnet.bin").exists());
    assert_eq!(fs::read_to_string(run_dir.join("log.csv")).unwrap().lines().count(), 1);
}

#[test]
fn stop_and_resume_reach_the_full_budget() {
    let dir = workspace("reach");
    assert!(train(dir.path(), &["--variant", "DDQN", "--stop-after", "50"]).status.success());
    let summary = dir.path().join("runs/reach/DDQN/seed_0/summary.json");
    let read = || serde_json::from_str::<serde_json::Value>(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(read()["total_steps"], 50);
    assert!(train(dir.path(), &["--variant", "DDQN", "--resume"]).status.success());
    assert_eq!(read()["total_steps"], 120);
}

#[test]
fn eval_checks_episodes_and_shapes() {
    let dir = workspace("reach");
    assert!(train(dir.path(), &["--variant", "DDQN_A", "--total-steps", "40"]).status.success());
    let ckpt = dir.path().join("runs/reach/DDQN_A/seed_0/qnet.bin");
    let eval = |config: &Path, episodes: &str, out: &Path| {
        run(bin()
            .arg("eval")
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--config")
            .arg(config)
            .args(["--episodes", episodes, "--seed", "3"])
            .arg("--out")
            .arg(out))
    };
    let run_cfg = dir.path().join("run.json");
    assert_eq!(eval(&run_cfg, "0", &dir.path().join("e0.json")).status.code(), Some(2));

    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert!(eval(&run_cfg, "5", &a).status.success());
    assert!(eval(&run_cfg, "5", &b).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(report["variant"], "DDQN_A");
    assert_eq!(report["mask_violations"], 0);

    // A coarser grid changes the network's shape.
    let mut task: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("task_reach.json")).unwrap()).unwrap();
    task["action_stride"] = json!(8);
    write(&dir.path().join("task_coarse.json"), task);
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&run_cfg).unwrap()).unwrap();
    cfg["task"] = json!("task_coarse.json");
    let coarse = dir.path().join("coarse.json");
    write(&coarse, cfg);
    let o = eval(&coarse, "5", &dir.path().join("c.json"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("checkpoint") && err.contains("config"), "{err}");
}

#[test]
fn compare_merges_runs_and_rejects_bad_inputs() {
    let dir = workspace("reach");
    assert!(train(dir.path(), &[]).status.success());
    let out = dir.path().join("cmp");
    let o = run(bin().arg("compare").arg(dir.path().join("run.json")).arg("--out").arg(&out).args(["--window", "5"]));
    assert!(o.status.success());
    for f in ["success_rate_DDQN.csv", "success_rate_DDQN_A.csv", "move_distance_DDQN.csv", "steps_to_threshold.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let door = workspace("door");
    let o = run(bin()
        .arg("compare")
        .arg(dir.path().join("run.json"))
        .arg(door.path().join("run.json"))
        .arg("--out")
        .arg(dir.path().join("cmp2")));
    assert_eq!(o.status.code(), Some(2));

    fs::remove_file(dir.path().join("runs/reach/DDQN/seed_0/summary.json")).unwrap();
    let o = run(bin().arg("compare").arg(dir.path().join("run.json")).arg("--out").arg(dir.path().join("cmp3")));
    assert_eq!(o.status.code(), Some(2));
}
