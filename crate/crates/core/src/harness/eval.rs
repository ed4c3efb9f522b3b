use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::sim::Outcome;

use super::config::RunConfig;
use super::policy::Policy;

/// Environments stepped together per policy call.
pub const EVAL_BATCH: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub success: bool,
    pub episode_return: f64,
    pub length: usize,
    pub final_distance: f64,
    pub object_ids: Vec<usize>,
    pub target_id: usize,
}

/// Runs one episode per seed, `EVAL_BATCH` environments at a time.
pub fn run_episodes(
    make_env: &dyn Fn() -> Result<Environment>,
    seeds: &[u64],
    policy: &mut dyn Policy,
) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(EVAL_BATCH) {
        let mut envs = Vec::with_capacity(chunk.len());
        let mut obs: Vec<Observation> = Vec::with_capacity(chunk.len());
        for s in chunk {
            let mut e = make_env()?;
            obs.push(e.reset(*s)?);
            envs.push(e);
        }
        let mut results: Vec<Option<Episode>> = vec![None; chunk.len()];
        let mut returns = vec![0.0; chunk.len()];
        while results.iter().any(Option::is_none) {
            let live: Vec<usize> = (0..chunk.len()).filter(|i| results[*i].is_none()).collect();
            let actions = {
                let e: Vec<&Environment> = live.iter().map(|i| &envs[*i]).collect();
                let o: Vec<&Observation> = live.iter().map(|i| &obs[*i]).collect();
                policy.act(&e, &o)?
            };
            for (i, a) in live.into_iter().zip(actions) {
                let step = envs[i].step(&a)?;
                returns[i] += step.reward;
                obs[i] = step.observation;
                if step.outcome != Outcome::Running {
                    let state = envs[i].state().expect("stepped");
                    results[i] = Some(Episode {
                        seed: chunk[i],
                        success: step.outcome == Outcome::Success,
                        episode_return: returns[i],
                        length: state.t,
                        final_distance: step.distance,
                        object_ids: state.object_ids(),
                        target_id: state.target().id,
                    });
                }
            }
        }
        out.extend(results.into_iter().map(Option::unwrap));
    }
    Ok(out)
}

/// Deterministic per-trial seed.
pub fn trial_seed(base: u64, object: usize, trial: usize) -> u64 {
    let mut z = base ^ ((object as u64) << 32) ^ (trial as u64);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub object_id: usize,
    pub held_out: bool,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub final_distance: f64,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub object_id: usize,
    pub held_out: bool,
    pub trials: usize,
    pub successes: usize,
    pub mean_final_distance: f64,
}

impl TrialResult {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<TrialRecord>,
    pub train: Vec<TrialResult>,
    pub holdout: Vec<TrialResult>,
}

impl EvalReport {
    pub fn overall_success(&self, held_out: bool) -> f64 {
        let rows = if held_out { &self.holdout } else { &self.train };
        let (s, t) = rows.iter().fold((0, 0), |(s, t), r| (s + r.successes, t + r.trials));
        s as f64 / t.max(1) as f64
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut trials = String::from("object_id,held_out,trial,seed,success,final_distance,length\n");
        for r in &self.records {
            trials.push_str(&format!(
                "{},{},{},{},{},{:.6},{}\n",
                r.object_id,
                r.held_out,
                r.trial,
                r.seed,
                u8::from(r.success),
                r.final_distance,
                r.length
            ));
        }
        write_file(&dir.join("trials.csv"), &trials)?;
        let mut objects = String::from("object_id,held_out,trials,successes,success_rate,mean_final_distance\n");
        for r in self.train.iter().chain(&self.holdout) {
            objects.push_str(&format!(
                "{},{},{},{},{:.4},{:.6}\n",
                r.object_id,
                r.held_out,
                r.trials,
                r.successes,
                r.success_rate(),
                r.mean_final_distance
            ));
        }
        write_file(&dir.join("objects.csv"), &objects)
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Per-object trials with the target forced to each object in turn.
/// Held-out objects are evaluated among training-pool distractors.
pub fn evaluate_objects(
    cfg: &RunConfig,
    train_ids: &[usize],
    holdout_ids: &[usize],
    trials: usize,
    policy: &mut dyn Policy,
) -> Result<EvalReport> {
    let mut report = EvalReport {
        records: Vec::new(),
        train: Vec::new(),
        holdout: Vec::new(),
    };
    let objects = train_ids
        .iter()
        .map(|id| (*id, false))
        .chain(holdout_ids.iter().map(|id| (*id, true)));
    for (id, held) in objects {
        let mut pool = train_ids.to_vec();
        if held {
            pool.push(id);
        }
        let seeds: Vec<u64> = (0..trials).map(|t| trial_seed(0x7e57, id, t)).collect();
        let make = || cfg.environment(&pool, Some(id));
        let eps = run_episodes(&make, &seeds, policy)?;
        let mut successes = 0;
        let mut dist = 0.0;
        for (t, e) in eps.iter().enumerate() {
            if let Some(leak) = e.object_ids.iter().find(|o| holdout_ids.contains(o) && **o != id) {
                return Err(Error::state(format!("held-out object {leak} appeared as a distractor")));
            }
            successes += usize::from(e.success);
            dist += e.final_distance;
            report.records.push(TrialRecord {
                object_id: id,
                held_out: held,
                trial: t,
                seed: e.seed,
                success: e.success,
                final_distance: e.final_distance,
                length: e.length,
            });
        }
        let row = TrialResult {
            object_id: id,
            held_out: held,
            trials,
            successes,
            mean_final_distance: dist / trials.max(1) as f64,
        };
        if held {
            report.holdout.push(row);
        } else {
            report.train.push(row);
        }
    }
    Ok(report)
}

/// Aggregate over episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_final_distance: f64,
}

pub fn summarize(eps: &[Episode]) -> EvalSummary {
    let n = eps.len().max(1) as f64;
    EvalSummary {
        episodes: eps.len(),
        success_rate: eps.iter().filter(|e| e.success).count() as f64 / n,
        mean_return: eps.iter().map(|e| e.episode_return).sum::<f64>() / n,
        mean_final_distance: eps.iter().map(|e| e.final_distance).sum::<f64>() / n,
    }
}
