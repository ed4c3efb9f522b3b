use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::sim::Outcome;

use super::agent::{Agent, UpdateStats};
use super::config::UpdateMode;
use super::replay::{ReplayStore, Transition};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    pub updates: u64,
}

/// One line of the metrics stream, written when an episode ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub step: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: u64,
    pub success: bool,
    /// Means over the updates made during the episode; `None` before learning starts.
    pub losses: Option<LossSummary>,
    pub alpha: f64,
    pub object_ids: Vec<usize>,
    pub target_id: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct LossAcc {
    critic: f64,
    actor: f64,
    alpha: f64,
    n: u64,
}

impl LossAcc {
    fn add(&mut self, s: &UpdateStats) {
        self.critic += s.critic.loss;
        self.actor += s.actor.loss;
        self.alpha += s.alpha_loss;
        self.n += 1;
    }

    /// Means since the last call, then resets.
    fn summary(&mut self) -> Option<LossSummary> {
        let acc = std::mem::take(self);
        (acc.n > 0).then(|| {
            let n = acc.n as f64;
            LossSummary {
                critic: acc.critic / n,
                actor: acc.actor / n,
                alpha: acc.alpha / n,
                updates: acc.n,
            }
        })
    }
}

struct Episode {
    obs: Observation,
    ret: f64,
    len: u64,
}

/// Pre-fill, then interleaved stepping and updating.
pub struct Trainer {
    pub env: Environment,
    pub agent: Agent<f32>,
    pub replay: ReplayStore,
    act_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    step: u64,
    episode: u64,
    current: Option<Episode>,
    debt: f64,
    losses: LossAcc,
}

pub type Sink<'a> = dyn FnMut(&EpisodeRecord) -> Result<()> + Send + 'a;

impl Trainer {
    pub fn new(env: Environment, agent: Agent<f32>, seed: u64) -> Result<Self> {
        if env.shape() != agent.shape {
            return Err(Error::input(format!(
                "environment shape {:?} differs from the agent's {:?}",
                env.shape(),
                agent.shape
            )));
        }
        let replay = ReplayStore::new(agent.config.replay_capacity)?;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Ok(Trainer {
            env,
            agent,
            replay,
            act_rng: ChaCha8Rng::seed_from_u64(master.gen()),
            sample_rng: ChaCha8Rng::seed_from_u64(master.gen()),
            step: 0,
            episode: 0,
            current: None,
            debt: 0.0,
            losses: LossAcc::default(),
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn episodes_done(&self) -> u64 {
        self.episode
    }

    fn learning(&self) -> bool {
        self.step >= self.agent.config.prefill as u64 && self.replay.len() >= self.agent.config.batch_size
    }

    fn begin_episode(env: &mut Environment, rng: &mut ChaCha8Rng) -> Result<Episode> {
        let seed: u64 = rng.gen();
        Ok(Episode {
            obs: env.reset(seed)?,
            ret: 0.0,
            len: 0,
        })
    }

    /// One environment step; returns the finished episode's record if any.
    fn env_step(
        env: &mut Environment,
        current: &mut Option<Episode>,
        rng: &mut ChaCha8Rng,
        policy: Option<&Agent<f32>>,
        counters: (u64, &mut u64),
    ) -> Result<(Transition, Option<EpisodeRecord>)> {
        if current.is_none() {
            *current = Some(Self::begin_episode(env, rng)?);
        }
        let ep = current.as_mut().unwrap();
        let action = match policy {
            Some(agent) => agent.act(&ep.obs, false, rng)?,
            None => (0..env.action_dim()).map(|_| rng.gen_range(-1.0f32..=1.0)).collect(),
        };
        let out = env.step(&action)?;
        let t = Transition {
            observation: ep.obs.clone(),
            action,
            reward: out.reward as f32,
            next_observation: out.observation.clone(),
            done: out.done,
            truncated: out.truncated,
        };
        ep.ret += out.reward;
        ep.len += 1;
        ep.obs = out.observation;
        let record = if out.done || out.truncated {
            let (step, episode) = counters;
            *episode += 1;
            let state = env.state().expect("stepped environment has state");
            let rec = EpisodeRecord {
                step: step + 1,
                episode: *episode,
                episode_return: ep.ret,
                length: ep.len,
                success: out.outcome == Outcome::Success,
                losses: None,
                alpha: 0.0,
                object_ids: state.objects.iter().map(|o| o.id).collect(),
                target_id: state.objects[state.target_index].id,
            };
            *current = None;
            Some(rec)
        } else {
            None
        };
        Ok((t, record))
    }

    fn finish_record(&mut self, mut rec: EpisodeRecord) -> EpisodeRecord {
        rec.losses = self.losses.summary();
        rec.alpha = self.agent.alpha();
        rec
    }

    /// Advances `steps` environment steps in the configured mode.
    pub fn run(&mut self, steps: u64, sink: &mut Sink) -> Result<()> {
        match self.agent.config.mode {
            UpdateMode::Sync => self.run_sync(steps, sink),
            UpdateMode::Async => self.run_async(steps, sink),
        }
    }

    /// Strictly interleaved, bit-reproducible training.
    pub fn run_sync(&mut self, steps: u64, sink: &mut Sink) -> Result<()> {
        for _ in 0..steps {
            let policy = self.learning().then_some(&self.agent);
            let (t, rec) = Self::env_step(
                &mut self.env,
                &mut self.current,
                &mut self.act_rng,
                policy,
                (self.step, &mut self.episode),
            )?;
            self.replay.push(t)?;
            self.step += 1;
            if self.learning() {
                self.debt += self.agent.config.update_ratio;
                while self.debt >= 1.0 {
                    self.debt -= 1.0;
                    let cfg = &self.agent.config;
                    let batch = self
                        .replay
                        .sample(cfg.batch_size, cfg.shift_pad, &mut self.sample_rng)?;
                    let stats = self.agent.update(&batch)?;
                    self.losses.add(&stats);
                }
            }
            if let Some(rec) = rec {
                let rec = self.finish_record(rec);
                sink(&rec)?;
            }
        }
        Ok(())
    }

    /// One stepping worker acting from policy snapshots and one update
    /// worker sampling the shared store.
    pub fn run_async(&mut self, steps: u64, sink: &mut Sink) -> Result<()> {
        let prefill = self.agent.config.prefill as u64;
        let batch_size = self.agent.config.batch_size;
        let ratio = self.agent.config.update_ratio;
        let interval = self.agent.config.snapshot_interval as u64;
        let start_step = self.step;
        let store = Mutex::new(std::mem::replace(&mut self.replay, ReplayStore::new(1)?));
        let snapshot = Mutex::new((0u64, self.agent.clone()));
        let losses = Mutex::new(self.losses);
        let step_counter = AtomicU64::new(self.step);
        let stop = AtomicBool::new(false);
        let learning_from = AtomicU64::new(u64::MAX);

        let env = &mut self.env;
        let current = &mut self.current;
        let act_rng = &mut self.act_rng;
        let episode = &mut self.episode;
        let agent = &mut self.agent;
        let sample_rng = &mut self.sample_rng;

        let (step_result, learn_result) = std::thread::scope(|scope| {
            let learner = scope.spawn(|| -> Result<()> {
                let mut done_updates = 0u64;
                while !stop.load(Ordering::Acquire) {
                    let from = learning_from.load(Ordering::Acquire);
                    let now = step_counter.load(Ordering::Acquire);
                    let owed = if from == u64::MAX {
                        0.0
                    } else {
                        (now - from) as f64 * ratio
                    };
                    if (done_updates as f64) + 1.0 > owed {
                        std::thread::yield_now();
                        continue;
                    }
                    let batch = {
                        let s = store.lock().unwrap();
                        s.sample(batch_size, agent.config.shift_pad, sample_rng)?
                    };
                    let stats = agent
                        .update(&batch)
                        .inspect_err(|_| stop.store(true, Ordering::Release))?;
                    losses.lock().unwrap().add(&stats);
                    done_updates += 1;
                    if done_updates % interval == 0 {
                        let mut snap = snapshot.lock().unwrap();
                        *snap = (snap.0 + 1, agent.clone());
                    }
                }
                Ok(())
            });

            let mut stepper = || -> Result<()> {
                let mut local: Option<(u64, Agent<f32>)> = None;
                for _ in 0..steps {
                    let now = step_counter.load(Ordering::Acquire);
                    let learning = now >= prefill && store.lock().unwrap().len() >= batch_size;
                    if learning && learning_from.load(Ordering::Acquire) == u64::MAX {
                        learning_from.store(now.max(start_step), Ordering::Release);
                    }
                    if learning {
                        let snap = snapshot.lock().unwrap();
                        if local.as_ref().map(|l| l.0) != Some(snap.0) {
                            local = Some((snap.0, snap.1.clone()));
                        }
                    }
                    let policy = if learning { local.as_ref().map(|l| &l.1) } else { None };
                    let (t, rec) = Self::env_step(env, current, act_rng, policy, (now, episode))?;
                    store.lock().unwrap().push(t)?;
                    step_counter.store(now + 1, Ordering::Release);
                    if let Some(mut rec) = rec {
                        rec.losses = losses.lock().unwrap().summary();
                        rec.alpha = snapshot.lock().unwrap().1.alpha();
                        sink(&rec)?;
                    }
                }
                Ok(())
            };
            let r = stepper();
            stop.store(true, Ordering::Release);
            (r, learner.join().expect("update worker panicked"))
        });
        self.replay = store.into_inner().unwrap();
        self.losses = losses.into_inner().unwrap();
        self.step = step_counter.into_inner();
        step_result.and(learn_result)
    }
}
