use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::sac::Agent;
use crate::sim::{position_jacobian, SimState, Simulator, Task};

/// Chooses normalized actions for a batch of environments stepped in lockstep.
pub trait Policy {
    fn act(&mut self, envs: &[&Environment], obs: &[&Observation]) -> Result<Vec<Vec<f32>>>;
}

/// Deterministic `tanh(mean)` actions from a trained agent.
pub struct AgentPolicy<'a> {
    pub agent: &'a Agent<f32>,
    rng: ChaCha8Rng,
}

impl<'a> AgentPolicy<'a> {
    pub fn new(agent: &'a Agent<f32>) -> Self {
        AgentPolicy {
            agent,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Policy for AgentPolicy<'_> {
    fn act(&mut self, _envs: &[&Environment], obs: &[&Observation]) -> Result<Vec<Vec<f32>>> {
        self.agent.act_batch(obs, true, &mut self.rng)
    }
}

/// Uniform actions in [-1, 1].
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, envs: &[&Environment], _obs: &[&Observation]) -> Result<Vec<Vec<f32>>> {
        Ok(envs
            .iter()
            .map(|e| (0..e.action_dim()).map(|_| self.rng.gen_range(-1.0f32..=1.0)).collect())
            .collect())
    }
}

/// Zero joint velocities with the gripper left untouched.
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn act(&mut self, envs: &[&Environment], _obs: &[&Observation]) -> Result<Vec<Vec<f32>>> {
        Ok(envs.iter().map(|e| vec![0.0; e.action_dim()]).collect())
    }
}

/// Hand-coded controller reading privileged state: resolved-rate motion to
/// the target center, close on double contact, then lift straight up.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedOracle {
    /// Proportional gain from position error (m) to end-effector speed (m/s).
    pub gain: f64,
    pub damping: f64,
    /// Extra height above the lift goal to aim for once grasped.
    pub lift_margin: f64,
    /// When false the gripper is held open, so grasps never happen.
    pub close_gripper: bool,
}

impl Default for ScriptedOracle {
    fn default() -> Self {
        ScriptedOracle {
            gain: 4.0,
            damping: 1e-3,
            lift_margin: 0.05,
            close_gripper: true,
        }
    }
}

impl ScriptedOracle {
    pub fn never_close() -> Self {
        ScriptedOracle {
            close_gripper: false,
            ..Default::default()
        }
    }

    /// Joint command in [-1, 1]^dof moving the end effector along `velocity`.
    pub fn joint_command(sim: &Simulator, state: &SimState, velocity: Vector3<f64>, damping: f64) -> Result<Vec<f32>> {
        let cols = position_jacobian(&sim.chain, &state.joint_angles)?;
        let n = cols.len();
        let j = DMatrix::from_fn(3, n, |r, c| cols[c][r]);
        let jjt = &j * j.transpose() + DMatrix::identity(3, 3) * damping;
        let w = jjt
            .lu()
            .solve(&DVector::from_column_slice(velocity.as_slice()))
            .ok_or_else(|| Error::state("singular arm configuration"))?;
        let dq = j.transpose() * w;
        let vmax = sim.chain.velocity_limit;
        let peak = dq.iter().fold(0.0f64, |m, v| m.max(v.abs())) / vmax;
        let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
        Ok(dq.iter().map(|v| (v * scale / vmax) as f32).collect())
    }

    pub fn action(&self, sim: &Simulator, state: &SimState) -> Result<Vec<f32>> {
        let kin = sim.kinematics(state);
        let ee = kin.end_effector_position();
        let target = state.target();
        let holding = state.attached.map(|a| a.object) == Some(state.target_index);
        let goal = if holding {
            let mut g = ee;
            g.z += sim.episode.lift_height + self.lift_margin - target.lift();
            g
        } else {
            target.center()
        };
        let velocity = (goal - ee) * self.gain;
        let mut a = Self::joint_command(sim, state, velocity, self.damping)?;
        if sim.episode.task == Task::Pickup {
            let grip = if !self.close_gripper {
                1.0
            } else if holding || sim.contact_flags(state).both() {
                -1.0
            } else {
                0.0
            };
            a.push(grip);
        }
        Ok(a)
    }
}

impl Policy for ScriptedOracle {
    fn act(&mut self, envs: &[&Environment], _obs: &[&Observation]) -> Result<Vec<Vec<f32>>> {
        envs.iter()
            .map(|e| {
                let state = e
                    .state()
                    .ok_or_else(|| Error::state("oracle needs a reset environment"))?;
                self.action(&e.sim, state)
            })
            .collect()
    }
}
