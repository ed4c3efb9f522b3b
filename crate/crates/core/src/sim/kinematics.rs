//! Serial-chain forward kinematics.
//!
//! Every joint rotates about one axis of its local frame and is followed by a
//! translation of `link_length` along the local x axis. With all angles at
//! zero the chain is a straight line along the base x axis.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointAxis {
    /// Rotation about local z.
    Yaw,
    /// Rotation about local y; positive angles tilt the next link downward.
    Pitch,
    /// Rotation about local x.
    Roll,
}

impl JointAxis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            JointAxis::Yaw => Vector3::z(),
            JointAxis::Pitch => Vector3::y(),
            JointAxis::Roll => Vector3::x(),
        }
    }
}

/// Translation plus roll/pitch/yaw, used for rigid mounts in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidOffset {
    pub translation: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl RigidOffset {
    pub fn identity() -> Self {
        RigidOffset {
            translation: [0.0; 3],
            rpy: [0.0; 3],
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.translation;
        let [r, p, yaw] = self.rpy;
        Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::from_euler_angles(r, p, yaw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub link_lengths: Vec<f64>,
    pub joint_limits: Vec<[f64; 2]>,
    pub axes: Vec<JointAxis>,
    /// Per-joint speed limit in rad/s.
    pub velocity_limit: f64,
    #[serde(default)]
    pub base_position: [f64; 3],
    /// Camera mount relative to the end-effector frame. The optical convention
    /// (z forward along the end-effector x axis, x right, y down) is applied on
    /// top of this offset.
    pub camera_offset: RigidOffset,
    /// Finger contact points in the end-effector frame.
    pub finger_offsets: [[f64; 3]; 2],
}

impl ChainSpec {
    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    /// Planar chain: every joint is a yaw joint. Handy for tests and examples.
    pub fn planar(link_lengths: &[f64]) -> Self {
        let n = link_lengths.len();
        ChainSpec {
            link_lengths: link_lengths.to_vec(),
            joint_limits: vec![[-std::f64::consts::PI, std::f64::consts::PI]; n],
            axes: vec![JointAxis::Yaw; n],
            velocity_limit: 1.0,
            base_position: [0.0; 3],
            camera_offset: RigidOffset::identity(),
            finger_offsets: [[0.0, 0.03, 0.0], [0.0, -0.03, 0.0]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if n < 2 {
            return Err(Error::config(format!("chain needs at least 2 joints, got {n}")));
        }
        if self.joint_limits.len() != n || self.axes.len() != n {
            return Err(Error::config(format!(
                "chain has {n} links but {} joint limits and {} axes",
                self.joint_limits.len(),
                self.axes.len()
            )));
        }
        if let Some(l) = self.link_lengths.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::config(format!("link lengths must be positive, got {l}")));
        }
        if let Some(lim) = self.joint_limits.iter().find(|[lo, hi]| !(lo < hi)) {
            return Err(Error::config(format!("joint limit {lim:?} has min >= max")));
        }
        if !(self.velocity_limit > 0.0) {
            return Err(Error::config("velocity limit must be positive"));
        }
        Ok(())
    }

    pub fn base(&self) -> Isometry3<f64> {
        let [x, y, z] = self.base_position;
        Isometry3::translation(x, y, z)
    }

    /// Camera frame relative to the end-effector frame.
    pub fn camera_mount(&self) -> Isometry3<f64> {
        self.camera_offset.isometry() * optical_alignment()
    }

    pub fn clamp_to_limits(&self, angles: &mut [f64]) {
        for (q, [lo, hi]) in angles.iter_mut().zip(&self.joint_limits) {
            *q = q.clamp(*lo, *hi);
        }
    }
}

/// Rotation taking camera axes (x right, y down, z forward) to a frame whose
/// x axis points forward and z axis points up.
pub fn optical_alignment() -> Isometry3<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(nalgebra::Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    ));
    Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_rotation_matrix(&rot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    /// Frame of each joint, before its link translation.
    pub joint_frames: Vec<Isometry3<f64>>,
    pub end_effector: Isometry3<f64>,
    pub camera: Isometry3<f64>,
}

impl Kinematics {
    pub fn end_effector_position(&self) -> Point3<f64> {
        Point3::from(self.end_effector.translation.vector)
    }

    pub fn finger_points(&self, chain: &ChainSpec) -> [Point3<f64>; 2] {
        chain
            .finger_offsets
            .map(|[x, y, z]| self.end_effector * Point3::new(x, y, z))
    }
}

pub fn fk(chain: &ChainSpec, joint_angles: &[f64]) -> Result<Kinematics> {
    if joint_angles.len() != chain.dof() {
        return Err(Error::input(format!(
            "expected {} joint angles, got {}",
            chain.dof(),
            joint_angles.len()
        )));
    }
    let mut frame = chain.base();
    let mut joint_frames = Vec::with_capacity(chain.dof());
    for ((q, axis), len) in joint_angles.iter().zip(&chain.axes).zip(&chain.link_lengths) {
        let rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(axis.unit()), *q);
        frame *= Isometry3::from_parts(Translation3::identity(), rot);
        joint_frames.push(frame);
        frame *= Isometry3::translation(*len, 0.0, 0.0);
    }
    Ok(Kinematics {
        joint_frames,
        end_effector: frame,
        camera: frame * chain.camera_mount(),
    })
}

/// Position Jacobian of the end effector by central differences.
pub fn position_jacobian(chain: &ChainSpec, joint_angles: &[f64]) -> Result<Vec<Vector3<f64>>> {
    let h = 1e-6;
    let mut q = joint_angles.to_vec();
    let mut cols = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        let q0 = q[i];
        q[i] = q0 + h;
        let plus = fk(chain, &q)?.end_effector.translation.vector;
        q[i] = q0 - h;
        let minus = fk(chain, &q)?.end_effector.translation.vector;
        q[i] = q0;
        cols.push((plus - minus) / (2.0 * h));
    }
    Ok(cols)
}
