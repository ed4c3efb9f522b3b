use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the actor aggregates the critic ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorObjective {
    #[default]
    MeanAll,
    MinSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Stepping and updating interleave on one thread, bit-reproducibly.
    #[default]
    Sync,
    /// One stepping worker and one update worker share the replay store.
    Async,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub tau: f64,
    pub ensemble_size: usize,
    pub target_subset: usize,
    pub batch_size: usize,
    /// Gradient updates per environment step; fractional values skip steps.
    pub update_ratio: f64,
    pub shift_pad: usize,
    /// Defaults to `-action_dim` when absent.
    pub entropy_target: Option<f64>,
    pub init_alpha: f64,
    pub latent_dim: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub hidden: Vec<usize>,
    pub log_std_bounds: [f64; 2],
    pub clip_weights: bool,
    pub kappa: f64,
    pub s_l: f64,
    pub actor_objective: ActorObjective,
    pub replay_capacity: usize,
    pub prefill: usize,
    pub mode: UpdateMode,
    /// Updates between policy snapshots handed to the stepping worker.
    pub snapshot_interval: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            tau: 0.005,
            ensemble_size: 5,
            target_subset: 2,
            batch_size: 128,
            update_ratio: 1.0,
            shift_pad: 4,
            entropy_target: None,
            init_alpha: 0.1,
            latent_dim: 50,
            conv_channels: vec![32, 32, 32],
            conv_kernel: 3,
            conv_stride: 2,
            hidden: vec![256, 256],
            log_std_bounds: [-10.0, 2.0],
            clip_weights: true,
            kappa: 2.0,
            s_l: std::f64::consts::SQRT_2,
            actor_objective: ActorObjective::MeanAll,
            replay_capacity: 100_000,
            prefill: 1_000,
            mode: UpdateMode::Sync,
            snapshot_interval: 50,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.target_subset < 2 || self.target_subset > self.ensemble_size {
            return fail(format!(
                "target subset {} must satisfy 2 <= M <= N = {}",
                self.target_subset, self.ensemble_size
            ));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return fail(format!("{name} must be a non-negative number, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if !(self.update_ratio.is_finite() && self.update_ratio >= 0.0) {
            return fail(format!("update ratio must be non-negative, got {}", self.update_ratio));
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return fail(format!("initial alpha must be positive, got {}", self.init_alpha));
        }
        if self.latent_dim == 0 || self.conv_kernel == 0 || self.conv_stride == 0 || self.conv_channels.contains(&0) {
            return fail("encoder sizes must be positive".into());
        }
        if self.hidden.contains(&0) {
            return fail("hidden widths must be positive".into());
        }
        let [lo, hi] = self.log_std_bounds;
        if !(lo < hi) {
            return fail(format!("log-std bounds [{lo}, {hi}] are empty"));
        }
        if self.kappa <= 0.0 || self.s_l <= 0.0 {
            return fail("clip constants must be positive".into());
        }
        if self.replay_capacity < self.batch_size {
            return fail(format!(
                "replay capacity {} is smaller than the batch size {}",
                self.replay_capacity, self.batch_size
            ));
        }
        if self.snapshot_interval == 0 {
            return fail("snapshot interval must be positive".into());
        }
        Ok(())
    }

    pub fn entropy_target_for(&self, action_dim: usize) -> f64 {
        self.entropy_target.unwrap_or(-(action_dim as f64))
    }
}
