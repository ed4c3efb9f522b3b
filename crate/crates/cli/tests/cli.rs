use std::path::PathBuf;
use std::process::{Command, Output};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn maskgoal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskgoal"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn invalid_config_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config_path("desk-reach.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replacen("[run]\n", "[run]\nlearning_rate = 1\n", 1)).unwrap();
    let out = maskgoal(&[
        "train",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("learning_rate") && msg.contains("line"), "{msg}");
}

#[test]
fn missing_config_exits_2() {
    let out = maskgoal(&[
        "render",
        "--config",
        "/nonexistent.toml",
        "--seed",
        "0",
        "--steps",
        "1",
        "--out",
        "/tmp",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("desk-pickup.toml");
    let out = maskgoal(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--steps",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
        "--roi",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["rgb_000000.png", "mask_000000.png", "rewards.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn unwritable_render_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("file");
    std::fs::write(&file, b"x").unwrap();
    let cfg = config_path("desk-reach.toml");
    let target = file.join("out");
    let out = maskgoal(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "0",
        "--steps",
        "1",
        "--out",
        target.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pickup_eval_scripted_and_open_gripper() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("desk-pickup.toml");
    let run = |policy: &str| {
        let out_dir = dir.path().join(policy);
        let out = maskgoal(&[
            "pickup-eval",
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            policy,
            "--trials",
            "4",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        (
            String::from_utf8(out.stdout).unwrap(),
            std::fs::read_to_string(out_dir.join("trials.csv")).unwrap(),
        )
    };
    let (scripted, trials) = run("scripted");
    assert!(scripted.contains("train success 1.0000"), "{scripted}");
    assert_eq!(trials.lines().count(), 1 + 8 * 4);
    assert_eq!(run("scripted").1, trials);
    let (open, _) = run("never-close");
    assert!(open.contains("train success 0.0000"), "{open}");
}

#[test]
fn pickup_eval_on_reach_config_exits_2() {
    let cfg = config_path("desk-reach.toml");
    let out = maskgoal(&[
        "pickup-eval",
        "--config",
        cfg.to_str().unwrap(),
        "--policy",
        "scripted",
        "--trials",
        "1",
        "--out",
        "/tmp/unused",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_needs_a_policy_source() {
    let cfg = config_path("desk-reach.toml");
    let out = maskgoal(&["eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverged_training_exits_3_and_keeps_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config_path("desk-reach.toml")).unwrap();
    // A runaway temperature drives the soft targets to infinity.
    let text =
        text.replacen("[sac]\n", "[sac]\nalpha_lr = 1000000.0\n", 1)
            .replacen("prefill = 1000\n", "prefill = 100\n", 1);
    let cfg = dir.path().join("diverge.toml");
    std::fs::write(&cfg, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = maskgoal(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "1",
        "--steps",
        "2000",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
    assert!(out_dir.join("seed_1/fault/manifest.json").exists());
}
