use std::path::PathBuf;

use maskgoal::goal::GoalMode;
use maskgoal::harness::{
    checkpoint_split, evaluate_objects, holdout_split, load_agent, render_command, run_eval, run_pickup_eval,
    run_training, AgentPolicy, RandomPolicy, RunConfig, ScriptedOracle,
};
use maskgoal::sac::Agent;
use maskgoal::Error;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).unwrap()
}

/// desk-reach shrunk so a run takes seconds.
fn tiny(name: &str) -> RunConfig {
    let mut cfg = load(name);
    cfg.camera.width = 32;
    cfg.camera.height = 18;
    cfg.sac.conv_channels = vec![4];
    cfg.sac.hidden = vec![16];
    cfg.sac.latent_dim = 8;
    cfg.sac.batch_size = 8;
    cfg.sac.prefill = 60;
    cfg.sac.replay_capacity = 1_000;
    cfg.sac.update_ratio = 0.5;
    cfg.run.total_steps = 240;
    cfg.run.eval_interval = 120;
    cfg.run.eval_episodes = 4;
    cfg.run.checkpoint_interval = 120;
    cfg.run.deterministic = true;
    cfg.validate().unwrap();
    cfg
}

#[test]
fn shipped_configs_parse() {
    for name in [
        "desk-reach.toml",
        "desk-reach-mask-reward.toml",
        "desk-reach-one-hot.toml",
        "desk-pickup.toml",
    ] {
        let cfg = load(name);
        assert_eq!(cfg.run.seeds.len(), 3, "{name}");
        assert_eq!(cfg.env.episode.object_pool.len(), 8, "{name}");
        assert_eq!(cfg.env.holdout_count, 2, "{name}");
    }
    assert_eq!(load("desk-reach-one-hot.toml").goal.goal_mode, GoalMode::OneHot);
}

#[test]
fn canonical_round_trip() {
    for name in ["desk-reach.toml", "desk-pickup.toml"] {
        let cfg = load(name);
        let text = cfg.canonical();
        let again = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), text);
    }
}

#[test]
fn unknown_keys_rejected_with_line() {
    let text = std::fs::read_to_string(config_path("desk-reach.toml")).unwrap();
    let bad = text.replacen("[camera]\n", "[camera]\nzoom = 2\n", 1);
    match RunConfig::from_toml_str(&bad) {
        Err(Error::Config(m)) => {
            assert!(m.contains("zoom"), "{m}");
            assert!(m.contains("line"), "{m}");
        }
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn mismatched_epsilon_rejected() {
    let mut cfg = load("desk-reach.toml");
    cfg.reward.epsilon = 0.1;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn holdout_split_is_seeded() {
    let ids: Vec<usize> = (0..8).collect();
    let a = holdout_split(&ids, 2, 5);
    assert_eq!(a, holdout_split(&ids, 2, 5));
    assert_eq!(a.holdout.len(), 2);
    assert_eq!(a.train.len(), 6);
    let mut all: Vec<usize> = a.train.iter().chain(&a.holdout).copied().collect();
    all.sort_unstable();
    assert_eq!(all, ids);
    let distinct: std::collections::HashSet<Vec<usize>> = (0..20).map(|s| holdout_split(&ids, 2, s).holdout).collect();
    assert!(distinct.len() > 5);
    let reversed: Vec<usize> = ids.iter().rev().copied().collect();
    assert_eq!(holdout_split(&reversed, 2, 5), a);
}

#[test]
fn scripted_oracle_solves_pickup() {
    let cfg = load("desk-pickup.toml");
    let split = cfg.split(0);
    let report = run_pickup_eval(&cfg, &split, 10, &mut ScriptedOracle::default()).unwrap();
    assert_eq!(report.train.len() + report.holdout.len(), 8);
    assert_eq!(report.overall_success(false), 1.0);
    assert_eq!(report.overall_success(true), 1.0);
    let again = run_pickup_eval(&cfg, &split, 10, &mut ScriptedOracle::default()).unwrap();
    assert_eq!(again, report);
}

#[test]
fn open_gripper_never_succeeds() {
    let cfg = load("desk-pickup.toml");
    let report = run_pickup_eval(&cfg, &cfg.split(0), 5, &mut ScriptedOracle::never_close()).unwrap();
    assert_eq!(report.overall_success(false), 0.0);
    assert_eq!(report.overall_success(true), 0.0);
}

#[test]
fn pickup_eval_requires_pickup_task() {
    let cfg = load("desk-reach.toml");
    let r = run_pickup_eval(&cfg, &cfg.split(0), 1, &mut ScriptedOracle::default());
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn scripted_oracle_reaches_every_object() {
    let cfg = load("desk-reach.toml");
    let ids = cfg.pool_ids();
    let report = evaluate_objects(&cfg, &ids, &[], 10, &mut ScriptedOracle::default()).unwrap();
    assert_eq!(report.overall_success(false), 1.0);
}

#[test]
fn eval_table_shape_and_determinism() {
    let cfg = tiny("desk-reach.toml");
    let split = cfg.split(1);
    let env = cfg.environment(&split.train, None).unwrap();
    let agent = Agent::new(cfg.effective_sac(), env.shape(), 1).unwrap();
    let five = &split.train[..5];
    let a = evaluate_objects(&cfg, five, &[], 25, &mut AgentPolicy::new(&agent)).unwrap();
    assert_eq!(a.records.len(), 125);
    assert_eq!(a.train.len(), 5);
    assert!(a.train.iter().all(|r| r.trials == 25 && r.successes <= r.trials));
    let b = evaluate_objects(&cfg, five, &[], 25, &mut AgentPolicy::new(&agent)).unwrap();
    assert_eq!(a, b);
    let held = evaluate_objects(&cfg, five, &split.holdout, 3, &mut RandomPolicy::new(0)).unwrap();
    assert_eq!(held.holdout.len(), 2);
    assert!(held.holdout.iter().all(|r| r.held_out));
}

#[test]
fn training_writes_per_seed_artifacts() {
    let mut cfg = tiny("desk-reach.toml");
    cfg.run.seeds = vec![3, 4];
    let dir = tempfile::tempdir().unwrap();
    let outcomes = run_training(&cfg, dir.path(), &mut |_| {}).unwrap();
    assert_eq!(outcomes.len(), 2);
    for o in &outcomes {
        assert_eq!(o.steps, 240);
        assert_eq!(o.curve.len(), 2);
        for f in [
            "metrics.jsonl",
            "summary.csv",
            "best/manifest.json",
            "final/manifest.json",
        ] {
            assert!(o.dir.join(f).exists(), "{f} missing in {}", o.dir.display());
        }
        let json = serde_json::to_string(o).unwrap();
        assert_eq!(
            &serde_json::from_str::<maskgoal::harness::SeedOutcome>(&json).unwrap(),
            o
        );
        let (seed, split) = checkpoint_split(&o.dir.join("final")).unwrap();
        assert_eq!(seed, o.seed);
        assert_eq!(split, o.split);
        let metrics = std::fs::read_to_string(o.dir.join("metrics.jsonl")).unwrap();
        assert!(metrics.lines().count() >= 3);
        for line in metrics.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for id in v["object_ids"].as_array().unwrap() {
                let id = id.as_u64().unwrap() as usize;
                assert!(!split.holdout.contains(&id), "held-out object {id} in training");
            }
        }
    }
    assert!(dir.path().join("config.toml").exists());
    let dirs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 2);

    let again = tempfile::tempdir().unwrap();
    let mut one = cfg.clone();
    one.run.seeds = vec![3];
    run_training(&one, again.path(), &mut |_| {}).unwrap();
    for f in ["summary.csv", "metrics.jsonl"] {
        let a = std::fs::read(dir.path().join("seed_3").join(f)).unwrap();
        let b = std::fs::read(again.path().join("seed_3").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }

    let ckpt = dir.path().join("seed_3/final");
    let r1 = run_eval(&ckpt, &cfg, 2, true).unwrap();
    assert_eq!(r1, run_eval(&ckpt, &cfg, 2, true).unwrap());
    assert_eq!(r1.holdout.len(), 2);

    let mut other = cfg.clone();
    other.goal.goal_mode = GoalMode::OneHot;
    assert!(matches!(load_agent(&ckpt, &other), Err(Error::Input(_))));
}

#[test]
fn render_single_step() {
    let cfg = load("desk-reach.toml");
    let dir = tempfile::tempdir().unwrap();
    let rows = render_command(&cfg, 0, 1, dir.path(), false).unwrap();
    assert_eq!(rows.len(), 1);
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("rgb_")).count(), 1);
    assert_eq!(names.iter().filter(|n| n.starts_with("mask_")).count(), 1);
    let csv = std::fs::read_to_string(dir.path().join("rewards.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let mask = image::open(dir.path().join("mask_000000.png")).unwrap().to_luma8();
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
}

#[test]
fn render_roi_overlay() {
    let cfg = load("desk-pickup.toml");
    let dir = tempfile::tempdir().unwrap();
    render_command(&cfg, 0, 1, dir.path(), true).unwrap();
    let img = image::open(dir.path().join("mask_000000.png")).unwrap().to_rgb8();
    let roi = cfg.reward.roi.unwrap().rect(cfg.camera.width, cfg.camera.height);
    let mut border = 0;
    for (x, y, p) in img.enumerate_pixels() {
        let on_border = roi.is_border(y as usize, x as usize);
        if p.0[0] != 255 {
            assert_eq!(p.0[0] != 0, on_border, "pixel ({x}, {y})");
        }
        border += usize::from(on_border);
    }
    assert!(border > 0);
}

#[test]
fn approach_mask_reward_nondecreasing() {
    let cfg = load("desk-reach.toml");
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let rows = render_command(&cfg, seed, 80, dir.path(), false).unwrap();
        assert!(!rows.is_empty());
        for w in rows.windows(2) {
            // The terminal bonus lands on the last row only.
            let (a, b) = (w[0].rewards[2], w[1].rewards[2]);
            assert!(b >= a - 1e-12, "seed {seed} step {}: {a} then {b}", w[1].step);
        }
    }
}

#[test]
fn render_into_unwritable_path_fails() {
    let cfg = load("desk-reach.toml");
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, b"x").unwrap();
    assert!(matches!(
        render_command(&cfg, 0, 1, &file.join("out"), false),
        Err(Error::Io { .. })
    ));
}
