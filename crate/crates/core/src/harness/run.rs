use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::sac::{Agent, EpisodeRecord, Trainer};
use crate::sim::Task;

use super::config::{RunConfig, Split};
use super::eval::{evaluate_objects, run_episodes, summarize, write_file, EvalReport, EvalSummary};
use super::policy::{AgentPolicy, Policy};

const EVAL_SEED_BASE: u64 = 0xe7a1;

/// One row of a seed's learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    /// Training episodes completed so far.
    pub train_episodes: u64,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub steps: u64,
    pub curve: Vec<EvalPoint>,
    pub split: Split,
}

impl SeedOutcome {
    pub fn best_success(&self) -> f64 {
        self.curve.iter().map(|p| p.summary.success_rate).fold(0.0, f64::max)
    }

    /// First evaluated step whose success rate reaches `rate`.
    pub fn steps_to(&self, rate: f64) -> Option<u64> {
        self.curve
            .iter()
            .find(|p| p.summary.success_rate >= rate)
            .map(|p| p.step)
    }
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Evaluation episodes on the training pool with a fixed seed set.
pub fn evaluate_training_pool(
    cfg: &RunConfig,
    split: &Split,
    policy: &mut dyn Policy,
    episodes: usize,
) -> Result<EvalSummary> {
    let seeds: Vec<u64> = (0..episodes as u64)
        .map(|k| EVAL_SEED_BASE.wrapping_mul(1_000_003).wrapping_add(k))
        .collect();
    let make = || cfg.environment(&split.train, None);
    Ok(summarize(&run_episodes(&make, &seeds, policy)?))
}

fn save_agent(agent: &Agent<f32>, dir: &Path, seed: u64, step: u64, split: &Split) -> Result<()> {
    let mut extra = serde_json::Map::new();
    extra.insert("seed".into(), seed.into());
    extra.insert("step".into(), step.into());
    extra.insert("split".into(), serde_json::to_value(split).expect("split serializes"));
    agent.save(dir, extra)
}

/// Reads the seed and object split stored with a checkpoint.
pub fn checkpoint_split(dir: &Path) -> Result<(u64, Split)> {
    let m = checkpoint::read_manifest(dir)?;
    let seed = m.extra.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let split = m
        .extra
        .get("split")
        .cloned()
        .ok_or_else(|| Error::input(format!("checkpoint {} has no object split", dir.display())))
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::input(e.to_string())))?;
    Ok((seed, split))
}

/// Trains every configured seed under `out`, one subdirectory each.
pub fn run_training(cfg: &RunConfig, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<Vec<SeedOutcome>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.toml"), &cfg.canonical())?;
    cfg.run
        .seeds
        .iter()
        .map(|s| train_seed(cfg, *s, &seed_dir(out, *s), progress))
        .collect()
}

pub fn train_seed(cfg: &RunConfig, seed: u64, dir: &Path, progress: &mut dyn FnMut(&str)) -> Result<SeedOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let split = cfg.split(seed);
    let env = cfg.environment(&split.train, None)?;
    let agent = Agent::new(cfg.effective_sac(), env.shape(), seed)?;
    let mut trainer = Trainer::new(env, agent, seed)?;

    let metrics_path = dir.join("metrics.jsonl");
    let file = std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut summary = String::from("step,episodes,success_rate,mean_return,mean_final_distance\n");
    let mut curve = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let run = &cfg.run;
    let mut next_checkpoint = run.checkpoint_interval;

    let result = (|| -> Result<()> {
        while trainer.steps_done() < run.total_steps {
            let chunk = run.eval_interval.min(run.total_steps - trainer.steps_done());
            let holdout = &split.holdout;
            let mut sink = |r: &EpisodeRecord| -> Result<()> {
                if let Some(id) = r.object_ids.iter().find(|id| holdout.contains(id)) {
                    return Err(Error::state(format!(
                        "held-out object {id} appeared in training episode {}",
                        r.episode
                    )));
                }
                let line = serde_json::to_string(r).expect("record serializes");
                writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))
            };
            trainer.run(chunk, &mut sink)?;
            let step = trainer.steps_done();
            let s = evaluate_training_pool(cfg, &split, &mut AgentPolicy::new(&trainer.agent), run.eval_episodes)?;
            let point = EvalPoint {
                step,
                train_episodes: trainer.episodes_done(),
                summary: s,
            };
            summary.push_str(&format!(
                "{},{},{:.4},{:.6},{:.6}\n",
                step, point.train_episodes, s.success_rate, s.mean_return, s.mean_final_distance
            ));
            write_file(&dir.join("summary.csv"), &summary)?;
            progress(&format!(
                "seed {seed} step {step}: success {:.2}, return {:.2}, final distance {:.3}",
                s.success_rate, s.mean_return, s.mean_final_distance
            ));
            curve.push(point);
            if s.success_rate > best {
                best = s.success_rate;
                save_agent(&trainer.agent, &dir.join("best"), seed, step, &split)?;
            }
            if step >= next_checkpoint {
                save_agent(&trainer.agent, &dir.join("final"), seed, step, &split)?;
                next_checkpoint += run.checkpoint_interval;
            }
            if run.stop_at_success.is_some_and(|t| s.success_rate >= t) {
                break;
            }
        }
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))
    })();
    if let Err(e) = result {
        let _ = metrics.flush();
        // Keep whatever was learned for inspection.
        let _ = save_agent(&trainer.agent, &dir.join("fault"), seed, trainer.steps_done(), &split);
        return Err(e);
    }
    save_agent(&trainer.agent, &dir.join("final"), seed, trainer.steps_done(), &split)?;
    Ok(SeedOutcome {
        seed,
        dir: dir.to_path_buf(),
        steps: trainer.steps_done(),
        curve,
        split,
    })
}

pub fn load_agent(checkpoint: &Path, cfg: &RunConfig) -> Result<(Agent<f32>, Split)> {
    let (seed, split) = checkpoint_split(checkpoint)?;
    let env = cfg.environment(&split.train, None)?;
    let agent = Agent::load(checkpoint, env.shape(), seed)?;
    if agent.shape != env.shape() {
        return Err(Error::input("checkpoint network shapes do not match the config"));
    }
    Ok((agent, split))
}

/// Per-object evaluation of a checkpoint, optionally including held-out objects.
pub fn run_eval(checkpoint: &Path, cfg: &RunConfig, trials: usize, holdout: bool) -> Result<EvalReport> {
    let (agent, split) = load_agent(checkpoint, cfg)?;
    let held: &[usize] = if holdout { &split.holdout } else { &[] };
    evaluate_objects(cfg, &split.train, held, trials, &mut AgentPolicy::new(&agent))
}

/// Pick-up trials for every object of the pool under `policy`.
pub fn run_pickup_eval(cfg: &RunConfig, split: &Split, trials: usize, policy: &mut dyn Policy) -> Result<EvalReport> {
    if cfg.env.episode.task != Task::Pickup {
        return Err(Error::config("pick-up evaluation needs env.episode.task = \"pickup\""));
    }
    evaluate_objects(cfg, &split.train, &split.holdout, trials, policy)
}
