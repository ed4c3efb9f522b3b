use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, ObservationConfig, Randomization};
use crate::error::{Error, Result};
use crate::render::{Intrinsics, SceneStyle};
use crate::rewards::RewardConfig;
use crate::sac::{SacConfig, UpdateMode};
use crate::sim::{ChainSpec, EpisodeConfig, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub chain: ChainSpec,
    pub episode: EpisodeConfig,
    /// Pool objects withheld from training, chosen per seed.
    #[serde(default)]
    pub holdout_count: usize,
    #[serde(default)]
    pub randomization: Randomization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub horizontal_fov_deg: f64,
    #[serde(default)]
    pub style: SceneStyle,
}

impl CameraSection {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            width: self.width,
            height: self.height,
            horizontal_fov_deg: self.horizontal_fov_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub output_dir: PathBuf,
    /// Forces the synchronous learner so outputs depend only on config and seed.
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "defaults::eval_episodes")]
    pub eval_episodes: usize,
    /// Ends a seed's run early once evaluation success reaches this rate.
    #[serde(default)]
    pub stop_at_success: Option<f64>,
    #[serde(default = "defaults::checkpoint_interval")]
    pub checkpoint_interval: u64,
}

mod defaults {
    pub fn eval_interval() -> u64 {
        5_000
    }
    pub fn eval_episodes() -> usize {
        100
    }
    pub fn checkpoint_interval() -> u64 {
        20_000
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub camera: CameraSection,
    pub goal: ObservationConfig,
    pub reward: RewardConfig,
    #[serde(default)]
    pub sac: SacConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Serialized form with every default written out.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let ep = &self.env.episode;
        self.env.chain.validate()?;
        ep.validate(&self.env.chain)?;
        self.reward.validate()?;
        self.sac.validate()?;
        self.camera
            .intrinsics()
            .camera(nalgebra::Isometry3::identity())
            .validate()?;
        if (self.reward.epsilon - ep.epsilon).abs() > 1e-12 {
            return Err(Error::config(format!(
                "reward.epsilon ({}) differs from env.episode.epsilon ({})",
                self.reward.epsilon, ep.epsilon
            )));
        }
        if ep.object_pool.len() < self.env.holdout_count + ep.max_objects {
            return Err(Error::config(format!(
                "pool of {} objects cannot hold out {} and still place {}",
                ep.object_pool.len(),
                self.env.holdout_count,
                ep.max_objects
            )));
        }
        let mut ids: Vec<usize> = ep.object_pool.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("object ids in env.episode.object_pool must be unique"));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds is empty"));
        }
        if self.run.eval_interval == 0 || self.run.checkpoint_interval == 0 {
            return Err(Error::config("run intervals must be positive"));
        }
        if let Some(s) = self.run.stop_at_success {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::config(format!(
                    "run.stop_at_success must lie in [0, 1], got {s}"
                )));
            }
        }
        Ok(())
    }

    /// Learner settings with the deterministic flag applied.
    pub fn effective_sac(&self) -> SacConfig {
        let mut s = self.sac.clone();
        if self.run.deterministic {
            s.mode = UpdateMode::Sync;
        }
        s
    }

    pub fn pool_ids(&self) -> Vec<usize> {
        self.env.episode.object_pool.iter().map(|o| o.id).collect()
    }

    pub fn split(&self, seed: u64) -> Split {
        holdout_split(&self.pool_ids(), self.env.holdout_count, seed)
    }

    /// Environment restricted to `pool` objects, optionally forcing the target.
    pub fn environment(&self, pool: &[usize], target: Option<usize>) -> Result<Environment> {
        let mut episode = self.env.episode.clone();
        episode.object_pool.retain(|o| pool.contains(&o.id));
        if let Some(t) = target {
            if !pool.contains(&t) {
                return Err(Error::input(format!("target object {t} is not in the episode pool")));
            }
            episode.target_ids = Some(vec![t]);
        } else if let Some(ids) = &mut episode.target_ids {
            ids.retain(|id| pool.contains(id));
        }
        let max = episode.object_pool.len();
        episode.max_objects = episode.max_objects.min(max);
        episode.min_objects = episode.min_objects.min(episode.max_objects);
        let sim = Simulator::new(self.env.chain.clone(), episode)?;
        Environment::new(
            sim,
            self.camera.intrinsics(),
            self.camera.style,
            self.goal.clone(),
            self.reward.clone(),
            self.env.randomization.clone(),
        )
    }
}

/// Training and held-out object ids for one seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Seeded shuffle of the pool; the last `count` ids are held out.
pub fn holdout_split(ids: &[usize], count: usize, seed: u64) -> Split {
    let mut v = ids.to_vec();
    v.sort_unstable();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x4f1b_bcdc_6762_30a5));
    let cut = v.len().saturating_sub(count);
    let holdout = v.split_off(cut);
    Split { train: v, holdout }
}
