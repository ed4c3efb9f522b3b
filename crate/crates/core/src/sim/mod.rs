//! Kinematic arm-over-table simulation.
//!
//! The arm is driven by joint velocity commands. There are no forces: objects
//! rest on the table until grasped, and a grasp is a rigid attachment that is
//! created when both fingers touch the target while the gripper is closing.

mod kinematics;

pub use kinematics::{fk, optical_alignment, position_jacobian, ChainSpec, JointAxis, Kinematics, RigidOffset};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

impl Shape {
    pub fn scaled(self, s: f64) -> Shape {
        match self {
            Shape::Sphere { radius } => Shape::Sphere { radius: radius * s },
            Shape::Box { half_extents } => Shape::Box {
                half_extents: half_extents.map(|h| h * s),
            },
        }
    }

    /// Height of the center above the table when resting upright.
    pub fn rest_height(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents } => half_extents[2],
        }
    }

    /// Radius of the circle enclosing the footprint on the table.
    pub fn footprint_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents } => half_extents[0].hypot(half_extents[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDescriptor {
    pub id: usize,
    pub name: String,
    /// Base RGB color in [0,1].
    pub color: [f64; 3],
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub color: [f64; 3],
    pub shape: Shape,
    pub pose: Isometry3<f64>,
}

impl SceneObject {
    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    /// Unsigned distance from `p` to the object's surface.
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => ((p - self.center()).norm() - radius).abs(),
            Shape::Box { half_extents } => {
                let local = self.pose.inverse_transform_point(p);
                let q = Vector3::new(
                    local.x.abs() - half_extents[0],
                    local.y.abs() - half_extents[1],
                    local.z.abs() - half_extents[2],
                );
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                (outside + inside).abs()
            }
        }
    }

    /// Height gained above the resting position.
    pub fn lift(&self) -> f64 {
        self.pose.translation.z - self.shape.rest_height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Reach,
    Pickup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub task: Task,
    pub episode_length: usize,
    pub object_pool: Vec<ObjectDescriptor>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Where object centers are placed on the table.
    pub table_region: TableRegion,
    /// Reach success distance in meters.
    pub epsilon: f64,
    /// Pick-up success height in meters.
    #[serde(default = "defaults::lift_height")]
    pub lift_height: f64,
    /// Pool ids eligible as the target. All placed objects are eligible when absent.
    #[serde(default)]
    pub target_ids: Option<Vec<usize>>,
    /// Size factor for the target object.
    #[serde(default = "defaults::one")]
    pub target_scale: f64,
    pub initial_joint_angles: Vec<f64>,
    /// Uniform perturbation of the initial joint angles, radians.
    #[serde(default)]
    pub initial_joint_noise: f64,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::contact_tolerance")]
    pub contact_tolerance: f64,
    /// Gripper opening fraction above which a held object is released.
    #[serde(default = "defaults::release_threshold")]
    pub release_threshold: f64,
    /// Gripper opening rate, fraction per second at full command.
    #[serde(default = "defaults::gripper_speed")]
    pub gripper_speed: f64,
    #[serde(default = "defaults::workspace_margin")]
    pub workspace_margin: f64,
    #[serde(default = "defaults::workspace_height")]
    pub workspace_height: f64,
    #[serde(default = "defaults::placement_retries")]
    pub placement_retries: usize,
    /// Minimum clearance between object footprints.
    #[serde(default = "defaults::placement_gap")]
    pub placement_gap: f64,
}

pub(crate) mod defaults {
    pub fn one() -> f64 {
        1.0
    }
    pub fn lift_height() -> f64 {
        0.30
    }
    pub fn dt() -> f64 {
        0.05
    }
    pub fn contact_tolerance() -> f64 {
        0.01
    }
    pub fn release_threshold() -> f64 {
        0.7
    }
    pub fn gripper_speed() -> f64 {
        2.0
    }
    pub fn workspace_margin() -> f64 {
        0.2
    }
    pub fn workspace_height() -> f64 {
        1.0
    }
    pub fn placement_retries() -> usize {
        1000
    }
    pub fn placement_gap() -> f64 {
        0.01
    }
}

impl EpisodeConfig {
    pub fn validate(&self, chain: &ChainSpec) -> Result<()> {
        if !(self.min_objects >= 1
            && self.min_objects <= self.max_objects
            && self.max_objects <= self.object_pool.len())
        {
            return Err(Error::config(format!(
                "need 1 <= min_objects ({}) <= max_objects ({}) <= pool size ({})",
                self.min_objects,
                self.max_objects,
                self.object_pool.len()
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.episode_length == 0 {
            return Err(Error::config("episode_length must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        let [x0, x1] = self.table_region.x;
        let [y0, y1] = self.table_region.y;
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::config("table region is empty"));
        }
        if self.initial_joint_angles.len() != chain.dof() {
            return Err(Error::config(format!(
                "initial_joint_angles has {} entries, chain has {} joints",
                self.initial_joint_angles.len(),
                chain.dof()
            )));
        }
        if let Some(ids) = &self.target_ids {
            if !ids.iter().any(|id| self.object_pool.iter().any(|o| o.id == *id)) {
                return Err(Error::config("no target_ids are present in the object pool"));
            }
        }
        Ok(())
    }

    /// Workspace box: the table region widened by the margin and extruded upward.
    pub fn workspace_contains(&self, p: &Point3<f64>) -> bool {
        let m = self.workspace_margin;
        let [x0, x1] = self.table_region.x;
        let [y0, y1] = self.table_region.y;
        p.x >= x0 - m
            && p.x <= x1 + m
            && p.y >= y0 - m
            && p.y <= y1 + m
            && p.z >= -m
            && p.z <= self.workspace_height + m
    }

    pub fn action_dim(&self, chain: &ChainSpec) -> usize {
        chain.dof() + usize::from(self.task == Task::Pickup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Running,
    Success,
    Timeout,
    OutOfBounds,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attachment {
    pub object: usize,
    /// Object pose in the end-effector frame at the moment of grasping.
    pub grasp: Isometry3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContactState {
    pub left_touch: bool,
    pub right_touch: bool,
}

impl ContactState {
    pub fn both(&self) -> bool {
        self.left_touch && self.right_touch
    }

    pub fn as_vector(&self) -> [f32; 2] {
        [
            f32::from(u8::from(self.left_touch)),
            f32::from(u8::from(self.right_touch)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub joint_angles: Vec<f64>,
    pub objects: Vec<SceneObject>,
    pub target_index: usize,
    pub attached: Option<Attachment>,
    pub gripper_open: f64,
    pub t: usize,
    pub outcome: Outcome,
    pub rng: ChaCha8Rng,
}

impl SimState {
    pub fn target(&self) -> &SceneObject {
        &self.objects[self.target_index]
    }

    pub fn object_ids(&self) -> Vec<usize> {
        self.objects.iter().map(|o| o.id).collect()
    }
}

/// Joint velocities plus, for pick-up, a gripper command in [-1, 1]
/// (negative closes).
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub velocities: Vec<f64>,
    pub gripper: Option<f64>,
}

impl Action {
    pub fn zero(dof: usize, gripper: bool) -> Self {
        Action {
            velocities: vec![0.0; dof],
            gripper: gripper.then_some(0.0),
        }
    }

    /// Maps a normalized action in [-1,1]^n to velocities in rad/s.
    pub fn from_normalized(a: &[f32], chain: &ChainSpec, task: Task) -> Self {
        let dof = chain.dof();
        Action {
            velocities: a[..dof].iter().map(|v| f64::from(*v) * chain.velocity_limit).collect(),
            gripper: (task == Task::Pickup).then(|| f64::from(a[dof])),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub chain: ChainSpec,
    pub episode: EpisodeConfig,
}

impl Simulator {
    pub fn new(chain: ChainSpec, episode: EpisodeConfig) -> Result<Self> {
        chain.validate()?;
        episode.validate(&chain)?;
        Ok(Simulator { chain, episode })
    }

    pub fn kinematics(&self, state: &SimState) -> Kinematics {
        fk(&self.chain, &state.joint_angles).expect("state joint count matches chain")
    }

    pub fn reset(&self, seed: u64) -> Result<SimState> {
        let cfg = &self.episode;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(cfg.min_objects..=cfg.max_objects);

        let pool: Vec<&ObjectDescriptor> = cfg.object_pool.iter().collect();
        let (target_desc, mut distractors): (&ObjectDescriptor, Vec<&ObjectDescriptor>) = match &cfg.target_ids {
            Some(ids) => {
                let eligible: Vec<&ObjectDescriptor> = pool.iter().copied().filter(|o| ids.contains(&o.id)).collect();
                let target = eligible[rng.gen_range(0..eligible.len())];
                let others: Vec<&ObjectDescriptor> = pool.iter().copied().filter(|o| o.id != target.id).collect();
                let n = (k - 1).min(others.len());
                let picked = index::sample(&mut rng, others.len(), n)
                    .into_iter()
                    .map(|i| others[i])
                    .collect();
                (target, picked)
            }
            None => {
                let mut picked: Vec<&ObjectDescriptor> = index::sample(&mut rng, pool.len(), k)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                let t = rng.gen_range(0..picked.len());
                (picked.swap_remove(t), picked)
            }
        };
        let target_index = rng.gen_range(0..=distractors.len());
        distractors.insert(target_index, target_desc);

        let mut objects: Vec<SceneObject> = Vec::with_capacity(distractors.len());
        for (i, desc) in distractors.iter().enumerate() {
            let shape = if i == target_index {
                desc.shape.scaled(cfg.target_scale)
            } else {
                desc.shape
            };
            let pose = self.place(&mut rng, &shape, &objects)?;
            objects.push(SceneObject {
                id: desc.id,
                color: desc.color,
                shape,
                pose,
            });
        }

        let mut joint_angles = cfg.initial_joint_angles.clone();
        if cfg.initial_joint_noise > 0.0 {
            for q in &mut joint_angles {
                *q += rng.gen_range(-cfg.initial_joint_noise..=cfg.initial_joint_noise);
            }
        }
        self.chain.clamp_to_limits(&mut joint_angles);

        Ok(SimState {
            joint_angles,
            objects,
            target_index,
            attached: None,
            gripper_open: 1.0,
            t: 0,
            outcome: Outcome::Running,
            rng,
        })
    }

    fn place(&self, rng: &mut ChaCha8Rng, shape: &Shape, placed: &[SceneObject]) -> Result<Isometry3<f64>> {
        let cfg = &self.episode;
        let r = shape.footprint_radius();
        for _ in 0..cfg.placement_retries {
            let x = rng.gen_range(cfg.table_region.x[0]..=cfg.table_region.x[1]);
            let y = rng.gen_range(cfg.table_region.y[0]..=cfg.table_region.y[1]);
            let yaw = match shape {
                Shape::Sphere { .. } => 0.0,
                Shape::Box { .. } => rng.gen_range(0.0..std::f64::consts::FRAC_PI_2),
            };
            let clear = placed.iter().all(|o| {
                let d = (o.pose.translation.x - x).hypot(o.pose.translation.y - y);
                d >= o.shape.footprint_radius() + r + cfg.placement_gap
            });
            if clear {
                return Ok(Isometry3::from_parts(
                    Translation3::new(x, y, shape.rest_height()),
                    UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
                ));
            }
        }
        Err(Error::config(format!(
            "could not place object without overlap after {} attempts",
            cfg.placement_retries
        )))
    }

    pub fn step(&self, state: &SimState, action: &Action) -> Result<SimState> {
        if state.outcome.is_terminal() {
            return Err(Error::state(format!(
                "episode already ended ({:?}) at t={}",
                state.outcome, state.t
            )));
        }
        let dof = self.chain.dof();
        if action.velocities.len() != dof {
            return Err(Error::input(format!(
                "action has {} velocities, chain has {dof} joints",
                action.velocities.len()
            )));
        }
        let wants_gripper = self.episode.task == Task::Pickup;
        if action.gripper.is_some() != wants_gripper {
            return Err(Error::input(if wants_gripper {
                "pick-up task requires a gripper command"
            } else {
                "reach task takes no gripper command"
            }));
        }
        if action
            .velocities
            .iter()
            .chain(action.gripper.iter())
            .any(|v| v.is_nan())
        {
            return Err(Error::input("NaN in action"));
        }

        let dt = self.episode.dt;
        let vmax = self.chain.velocity_limit;
        let mut next = state.clone();
        for (q, v) in next.joint_angles.iter_mut().zip(&action.velocities) {
            *q += v.clamp(-vmax, vmax) * dt;
        }
        self.chain.clamp_to_limits(&mut next.joint_angles);

        let (closing, opening) = match action.gripper {
            Some(cmd) => {
                let cmd = cmd.clamp(-1.0, 1.0);
                next.gripper_open = (next.gripper_open + cmd * self.episode.gripper_speed * dt).clamp(0.0, 1.0);
                (cmd < 0.0, cmd > 0.0)
            }
            None => (false, false),
        };

        let kin = self.kinematics(&next);
        if let Some(att) = next.attached {
            // Released once the gripper opens past the threshold.
            if opening && next.gripper_open > self.episode.release_threshold {
                let obj = &mut next.objects[att.object];
                let mut t = obj.pose.translation;
                t.z = obj.shape.rest_height();
                obj.pose = Isometry3::from_parts(t, obj.pose.rotation);
                next.attached = None;
            } else {
                next.objects[att.object].pose = kin.end_effector * att.grasp;
            }
        } else if wants_gripper && closing && self.contacts_with(&next, &kin).both() {
            let target = next.target_index;
            next.attached = Some(Attachment {
                object: target,
                grasp: kin.end_effector.inverse() * next.objects[target].pose,
            });
        }

        next.t += 1;
        next.outcome = self.check_termination(&next);
        Ok(next)
    }

    pub fn contact_flags(&self, state: &SimState) -> ContactState {
        self.contacts_with(state, &self.kinematics(state))
    }

    fn contacts_with(&self, state: &SimState, kin: &Kinematics) -> ContactState {
        let target = state.target();
        let tol = self.episode.contact_tolerance;
        let [l, r] = kin.finger_points(&self.chain);
        ContactState {
            left_touch: target.surface_distance(&l) < tol,
            right_touch: target.surface_distance(&r) < tol,
        }
    }

    /// Distance from the end effector to the target center.
    pub fn target_distance(&self, state: &SimState) -> f64 {
        (self.kinematics(state).end_effector_position() - state.target().center()).norm()
    }

    /// Remaining height to the pick-up goal, never negative.
    pub fn height_gap(&self, state: &SimState) -> f64 {
        (self.episode.lift_height - state.target().lift()).max(0.0)
    }

    pub fn target_lifted(&self, state: &SimState) -> bool {
        state.attached.map(|a| a.object) == Some(state.target_index)
            && state.target().lift() >= self.episode.lift_height - 1e-12
    }

    pub fn check_termination(&self, state: &SimState) -> Outcome {
        let cfg = &self.episode;
        let success = match cfg.task {
            Task::Reach => self.target_distance(state) <= cfg.epsilon,
            Task::Pickup => self.target_lifted(state),
        };
        if success {
            return Outcome::Success;
        }
        let ee = self.kinematics(state).end_effector_position();
        if !cfg.workspace_contains(&ee) {
            return Outcome::OutOfBounds;
        }
        if state.t >= cfg.episode_length {
            return Outcome::Timeout;
        }
        Outcome::Running
    }
}
