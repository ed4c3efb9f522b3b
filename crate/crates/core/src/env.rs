//! Goal-conditioned environment: simulator, camera, goal encoding and reward.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal::augment::{image_mix, photometric_augment, sensor_noise, PhotometricRanges};
use crate::goal::files::{mask_from_file, step_file};
use crate::goal::{
    append_mask, color_filter_mask, encode_goal, rgb_frame, rgb_to_hsv, stack_frames, FrameStack, GoalMode,
    GoalPayload, GoalSources, HueWindow, Mask, PackedFrame, Planar, STACK_DEPTH,
};
use crate::render::{cast_all, CameraModel, Image, Intrinsics, SceneStyle};
use crate::rewards::{RewardConfig, RewardTracker, StepSignals};
use crate::sim::{Action, ObjectDescriptor, Outcome, SimState, Simulator, Task};

/// Where the observation mask comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSource {
    /// Depth-tested silhouette from privileged scene state.
    Silhouette,
    /// HSV threshold around the target's base hue.
    ColorFilter {
        half_width_deg: f64,
        sat_min: f64,
        val_min: f64,
    },
    /// Precomputed masks `mask_<step>.png` in a directory.
    Files { dir: PathBuf },
}

/// Train-time perturbations of images and joint readings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    #[serde(default)]
    pub photometric: Option<PhotometricRanges>,
    /// Directory of real images blended into renders.
    #[serde(default)]
    pub mix_pool: Option<PathBuf>,
    /// Weight of the rendered image in the blend.
    #[serde(default = "default_mix_alpha")]
    pub mix_alpha: f64,
    #[serde(default)]
    pub joint_noise: f64,
}

fn default_mix_alpha() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub goal_mode: GoalMode,
    #[serde(default = "default_mask_source")]
    pub mask_source: MaskSource,
    /// Number of past actions in the proprioceptive vector.
    #[serde(default = "default_history")]
    pub action_history: usize,
    /// Replace the mask with zeros once the target is grasped.
    #[serde(default = "default_true")]
    pub blank_mask_after_grasp: bool,
    #[serde(default)]
    pub embedding_dir: Option<PathBuf>,
}

fn default_mask_source() -> MaskSource {
    MaskSource::Silhouette
}

fn default_history() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl ObservationConfig {
    pub fn new(goal_mode: GoalMode) -> Self {
        ObservationConfig {
            goal_mode,
            mask_source: MaskSource::Silhouette,
            action_history: 1,
            blank_mask_after_grasp: true,
            embedding_dir: None,
        }
    }
}

/// Stacked frames plus the flat vector input (proprioception then goal).
#[derive(Debug, Clone)]
pub struct Observation {
    pub frames: [Arc<PackedFrame>; STACK_DEPTH],
    pub vector: Vec<f32>,
}

impl Observation {
    pub fn image(&self) -> Planar {
        stack_frames(&self.frames).expect("observation always holds a full stack")
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels * STACK_DEPTH
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub observation: Observation,
    pub reward: f64,
    /// Terminal for bootstrapping: success or leaving the workspace.
    pub done: bool,
    /// Episode ended by the time limit only.
    pub truncated: bool,
    pub outcome: Outcome,
    pub distance: f64,
}

/// Dimensions the networks are built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub vector_dim: usize,
    pub action_dim: usize,
}

pub struct Environment {
    pub sim: Simulator,
    pub intrinsics: Intrinsics,
    pub style: SceneStyle,
    pub obs: ObservationConfig,
    pub randomization: Randomization,
    rewards: RewardTracker,
    state: Option<SimState>,
    stack: FrameStack,
    goal: GoalPayload,
    actions: VecDeque<Vec<f32>>,
    aug_rng: ChaCha8Rng,
    mix_pool: Vec<Image>,
    last_mask: Mask,
}

impl Environment {
    pub fn new(
        sim: Simulator,
        intrinsics: Intrinsics,
        style: SceneStyle,
        obs: ObservationConfig,
        reward: RewardConfig,
        randomization: Randomization,
    ) -> Result<Self> {
        intrinsics.camera(nalgebra::Isometry3::identity()).validate()?;
        if obs.goal_mode == GoalMode::OneHot {
            if let Some(o) = sim
                .episode
                .object_pool
                .iter()
                .find(|o| o.id >= crate::goal::ONE_HOT_DIM)
            {
                return Err(Error::config(format!(
                    "object id {} does not fit the one-hot goal",
                    o.id
                )));
            }
        }
        if !(0.0..=1.0).contains(&randomization.mix_alpha) {
            return Err(Error::config("mix_alpha must lie in [0,1]"));
        }
        let mix_pool = match &randomization.mix_pool {
            Some(dir) => crate::goal::files::load_image_pool(dir, intrinsics.width, intrinsics.height)?,
            None => Vec::new(),
        };
        Ok(Environment {
            rewards: RewardTracker::new(reward)?,
            sim,
            intrinsics,
            style,
            obs,
            randomization,
            state: None,
            stack: FrameStack::default(),
            goal: GoalPayload::Mask,
            actions: VecDeque::new(),
            aug_rng: ChaCha8Rng::seed_from_u64(0),
            mix_pool,
            last_mask: Mask::zeros(intrinsics.width, intrinsics.height),
        })
    }

    pub fn shape(&self) -> EnvShape {
        EnvShape {
            channels: self.obs.goal_mode.frame_channels() * STACK_DEPTH,
            height: self.intrinsics.height,
            width: self.intrinsics.width,
            vector_dim: self.proprio_dim() + self.obs.goal_mode.vector_dim(),
            action_dim: self.action_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.sim.episode.action_dim(&self.sim.chain)
    }

    fn proprio_dim(&self) -> usize {
        let touch = if self.sim.episode.task == Task::Pickup { 3 } else { 0 };
        self.sim.chain.dof() + self.obs.action_history * self.action_dim() + touch
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }

    pub fn goal(&self) -> &GoalPayload {
        &self.goal
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.rewards.config
    }

    /// Target mask of the latest frame, before ROI gating and blanking.
    pub fn last_mask(&self) -> &Mask {
        &self.last_mask
    }

    pub fn camera(&self, state: &SimState) -> CameraModel {
        self.intrinsics.camera(self.sim.kinematics(state).camera)
    }

    pub fn target_descriptor(&self, state: &SimState) -> Result<&ObjectDescriptor> {
        let id = state.target().id;
        self.sim
            .episode
            .object_pool
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| Error::state(format!("target id {id} missing from the pool")))
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let state = self.sim.reset(seed)?;
        self.aug_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let sources = GoalSources {
            embedding_dir: self.obs.embedding_dir.clone(),
            style: self.style,
        };
        self.goal = encode_goal(
            self.target_descriptor(&state)?,
            &state.target().center(),
            self.obs.goal_mode,
            &sources,
        )?;
        self.rewards.reset();
        self.actions = std::iter::repeat_n(vec![0.0; self.action_dim()], self.obs.action_history).collect();
        let frame = self.frame(&state)?;
        self.stack.reset(frame);
        self.state = Some(state);
        self.observation()
    }

    /// Applies a normalized action in [-1,1]^n.
    pub fn step(&mut self, action: &[f32]) -> Result<StepOutput> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::state("step called before reset"))?;
        if action.len() != self.action_dim() {
            return Err(Error::input(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.action_dim()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::input("action contains non-finite values"));
        }
        let clipped: Vec<f32> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let next = self.sim.step(
            state,
            &Action::from_normalized(&clipped, &self.sim.chain, self.sim.episode.task),
        )?;

        let frame = self.frame(&next)?;
        self.stack.push(frame);
        if self.obs.action_history > 0 {
            self.actions.pop_back();
            self.actions.push_front(clipped);
        }

        let distance = self.sim.target_distance(&next);
        let outcome = next.outcome;
        let signals = StepSignals {
            distance,
            reached: outcome == Outcome::Success,
            mask: &self.last_mask,
            double_contact: self.sim.contact_flags(&next).both(),
            height_gap: self.sim.height_gap(&next),
            at_height: self.sim.target_lifted(&next),
        };
        let reward = self.rewards.reward(&signals)?;
        self.state = Some(next);
        Ok(StepOutput {
            observation: self.observation()?,
            reward,
            done: matches!(outcome, Outcome::Success | Outcome::OutOfBounds),
            truncated: outcome == Outcome::Timeout,
            outcome,
            distance,
        })
    }

    /// Renders the target mask from the configured source.
    pub fn target_mask(&self, state: &SimState, rgb: &Image, silhouette: Mask) -> Result<Mask> {
        match &self.obs.mask_source {
            MaskSource::Silhouette => Ok(silhouette),
            MaskSource::ColorFilter {
                half_width_deg,
                sat_min,
                val_min,
            } => {
                let (hue, _, _) = rgb_to_hsv(state.target().color);
                Ok(color_filter_mask(
                    rgb,
                    HueWindow::centered(hue, *half_width_deg),
                    *sat_min,
                    *val_min,
                ))
            }
            MaskSource::Files { dir } => {
                mask_from_file(&step_file(dir, "mask_", state.t), state.t, rgb.width, rgb.height)
            }
        }
    }

    fn frame(&mut self, state: &SimState) -> Result<PackedFrame> {
        let cam = self.camera(state);
        let hits = cast_all(&state.objects, &cam, &self.style);
        let clean = hits.rgb(&state.objects, &self.style);
        let mask = self.target_mask(state, &clean, hits.mask_of(state.target_index))?;

        let mut rgb = clean;
        if !self.mix_pool.is_empty() {
            let real = &self.mix_pool[self.aug_rng.gen_range(0..self.mix_pool.len())];
            rgb = image_mix(&rgb, real, self.randomization.mix_alpha)?;
        }
        if let Some(ranges) = &self.randomization.photometric {
            rgb = photometric_augment(&rgb, &ranges.sample(&mut self.aug_rng))?;
        }

        let grasped = state.attached.is_some_and(|a| a.object == state.target_index);
        let frame = if self.obs.goal_mode == GoalMode::Mask {
            let shown = if grasped && self.obs.blank_mask_after_grasp {
                Mask::zeros(mask.width, mask.height)
            } else {
                mask.clone()
            };
            append_mask(&rgb, &shown)?
        } else {
            rgb_frame(&rgb, 3)
        };
        self.last_mask = mask;
        Ok(PackedFrame::pack(&frame))
    }

    fn observation(&mut self) -> Result<Observation> {
        let state = self.state.as_ref().expect("observation after reset");
        let frames = self.stack.snapshot()?;
        let expected = self.obs.goal_mode.frame_channels() * STACK_DEPTH;
        let channels = frames[0].channels * STACK_DEPTH;
        if channels != expected {
            return Err(Error::state(format!(
                "observation has {channels} channels, expected {expected}"
            )));
        }

        let chain = &self.sim.chain;
        let readings = sensor_noise(&state.joint_angles, self.randomization.joint_noise, &mut self.aug_rng)?;
        let mut vector: Vec<f32> = readings
            .iter()
            .zip(&chain.joint_limits)
            .map(|(q, [lo, hi])| (2.0 * (q - lo) / (hi - lo) - 1.0) as f32)
            .collect();
        for a in &self.actions {
            vector.extend_from_slice(a);
        }
        if self.sim.episode.task == Task::Pickup {
            vector.extend_from_slice(&self.sim.contact_flags(state).as_vector());
            vector.push(state.gripper_open as f32);
        }
        vector.extend(self.goal.vector());
        debug_assert_eq!(vector.len(), self.shape().vector_dim);
        Ok(Observation { frames, vector })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rewards::RewardFamily;
    use crate::sim::{ChainSpec, EpisodeConfig, JointAxis, RigidOffset, Shape};

    pub(crate) fn chain() -> ChainSpec {
        ChainSpec {
            link_lengths: vec![0.05, 0.35, 0.30],
            joint_limits: vec![[-1.2, 1.2], [-1.3, 0.9], [0.0, 2.6]],
            axes: vec![JointAxis::Yaw, JointAxis::Pitch, JointAxis::Pitch],
            velocity_limit: 1.0,
            base_position: [0.0, 0.0, 0.25],
            camera_offset: RigidOffset {
                translation: [-0.12, 0.0, 0.02],
                rpy: [0.0, 0.0, 0.0],
            },
            finger_offsets: [[0.0, 0.03, 0.0], [0.0, -0.03, 0.0]],
        }
    }

    pub(crate) fn pool() -> Vec<ObjectDescriptor> {
        let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        colors
            .iter()
            .enumerate()
            .map(|(i, c)| ObjectDescriptor {
                id: i,
                name: format!("o{i}"),
                color: *c,
                shape: Shape::Sphere { radius: 0.025 },
            })
            .collect()
    }

    pub(crate) fn episode(task: Task) -> EpisodeConfig {
        let mut e: EpisodeConfig = toml::from_str(
            r#"
            task = "reach"
            episode_length = 20
            min_objects = 2
            max_objects = 2
            epsilon = 0.05
            target_scale = 1.0
            initial_joint_angles = [0.0, -0.5, 2.0]
            initial_joint_noise = 0.0
            object_pool = []
            table_region = { x = [0.3, 0.48], y = [-0.14, 0.14] }
            "#,
        )
        .unwrap();
        e.task = task;
        e.object_pool = pool();
        e
    }

    pub(crate) fn env(mode: GoalMode, task: Task) -> Environment {
        let sim = Simulator::new(chain(), episode(task)).unwrap();
        let family = if task == Task::Pickup {
            RewardFamily::Pickup
        } else {
            RewardFamily::Distance
        };
        Environment::new(
            sim,
            Intrinsics {
                width: 40,
                height: 24,
                horizontal_fov_deg: 70.0,
            },
            SceneStyle::default(),
            ObservationConfig::new(mode),
            RewardConfig::new(family, 0.05, 5.0),
            Randomization::default(),
        )
        .unwrap()
    }

    #[test]
    fn channel_counts_per_mode() {
        let mut e = env(GoalMode::Mask, Task::Reach);
        let o = e.reset(1).unwrap();
        assert_eq!(o.channels(), 12);
        assert_eq!(o.image().channels, 12);
        let mut e = env(GoalMode::OneHot, Task::Reach);
        let o = e.reset(1).unwrap();
        assert_eq!(o.channels(), 9);
        assert_eq!(o.vector.len(), 3 + 3 + 20);
        let o = e.step(&[0.1, 0.0, -0.2]).unwrap().observation;
        assert_eq!(o.channels(), 9);
    }

    #[test]
    fn reset_replicates_first_frame() {
        let mut e = env(GoalMode::Mask, Task::Reach);
        let o = e.reset(3).unwrap();
        assert!(Arc::ptr_eq(&o.frames[0], &o.frames[2]));
        let o2 = e.step(&[0.5, 0.5, 0.5]).unwrap().observation;
        assert!(Arc::ptr_eq(&o2.frames[1], &o.frames[0]));
    }

    #[test]
    fn vector_carries_last_action() {
        let mut e = env(GoalMode::Position3d, Task::Reach);
        e.reset(0).unwrap();
        let o = e.step(&[0.25, -0.5, 2.0]).unwrap().observation;
        assert_eq!(&o.vector[3..6], &[0.25, -0.5, 1.0]);
        let target = e.state().unwrap().target().center();
        assert!((f64::from(o.vector[6]) - target.x).abs() < 1e-6);
    }

    #[test]
    fn longer_action_history() {
        let mut e = env(GoalMode::Mask, Task::Reach);
        e.obs.action_history = 15;
        let o = e.reset(0).unwrap();
        assert_eq!(o.vector.len(), 3 + 45);
        assert_eq!(e.shape().vector_dim, 48);
        let o = e.step(&[0.1, 0.2, 0.3]).unwrap().observation;
        assert_eq!(&o.vector[3..6], &[0.1, 0.2, 0.3]);
        assert!(o.vector[6..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pickup_vector_has_touch_flags() {
        let mut e = env(GoalMode::Mask, Task::Pickup);
        let o = e.reset(0).unwrap();
        assert_eq!(o.vector.len(), 3 + 4 + 3);
        assert_eq!(&o.vector[7..9], &[0.0, 0.0]);
        assert_eq!(o.vector[9], 1.0);
    }

    #[test]
    fn timeout_is_truncation() {
        let mut e = env(GoalMode::Mask, Task::Reach);
        e.reset(2).unwrap();
        let mut last = None;
        for _ in 0..20 {
            let out = e.step(&[0.0, 0.0, 0.0]).unwrap();
            let end = out.done || out.truncated;
            last = Some(out);
            if end {
                break;
            }
        }
        let out = last.unwrap();
        assert!(out.truncated && !out.done);
        assert!(e.step(&[0.0; 3]).is_err());
    }

    #[test]
    fn rejects_bad_actions() {
        let mut e = env(GoalMode::Mask, Task::Reach);
        assert!(matches!(e.step(&[0.0; 3]), Err(Error::State(_))));
        e.reset(0).unwrap();
        assert!(matches!(e.step(&[0.0; 2]), Err(Error::Input(_))));
        assert!(matches!(e.step(&[f32::NAN, 0.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn deterministic_rollouts() {
        let run = || {
            let mut e = env(GoalMode::Mask, Task::Reach);
            e.randomization.photometric = Some(PhotometricRanges::default());
            e.randomization.joint_noise = 0.05;
            let mut o = e.reset(11).unwrap();
            let mut trace = vec![o.vector.clone()];
            for k in 0..5 {
                let out = e.step(&[0.3, -0.1 * k as f32, 0.2]).unwrap();
                o = out.observation;
                trace.push(o.vector.clone());
                trace.push(vec![out.reward as f32]);
            }
            (trace, o.image())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn color_filter_source_tracks_silhouette() {
        let mut e = env(GoalMode::Mask, Task::Reach);
        e.reset(4).unwrap();
        let sil = e.last_mask().clone();
        e.obs.mask_source = MaskSource::ColorFilter {
            half_width_deg: 15.0,
            sat_min: 0.5,
            val_min: 0.05,
        };
        e.reset(4).unwrap();
        assert!(e.last_mask().intersection_over_union(&sil) >= 0.99);
    }

    #[test]
    fn mask_plane_blank_after_grasp() {
        let mut e = env(GoalMode::Mask, Task::Pickup);
        e.reset(0).unwrap();
        let mut state = e.state.clone().unwrap();
        let kin = e.sim.kinematics(&state);
        state.attached = Some(crate::sim::Attachment {
            object: state.target_index,
            grasp: kin.end_effector.inverse() * state.target().pose,
        });
        let frame = e.frame(&state).unwrap().unpack();
        assert!(frame.plane(3).iter().all(|v| *v == 0.0));
        e.obs.blank_mask_after_grasp = false;
        let frame = e.frame(&state).unwrap().unpack();
        let shown = frame.plane(3).iter().filter(|v| **v == 1.0).count();
        assert_eq!(shown, e.last_mask().count());
    }
}
