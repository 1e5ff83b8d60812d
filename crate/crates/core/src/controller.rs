//! Model-based low-level controller, ticked at 500 Hz.
//!
//! Per tick: PD on the base pose gives a target acceleration, the force QP
//! turns it into stance-foot ground reaction forces, the placement heuristic
//! plus a PD law drives the swing feet, and everything is mapped to joint
//! torques through the leg Jacobians.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::kinematics::{project_to_workspace, torques_from_forces, JointState, JointTorques};
use crate::model::{
    angular_velocity_to_euler_rates, build_m, gravity_augmented, rot_z, wrap_angle, BodyPose, FootForces,
    ModelError, PhysicalParams, RobotState, NUM_FEET,
};
use crate::primitives::ContactPattern;
use crate::qp::{
    build_force_qp, force_qp_cost, ContactLimits, QpError, QpSettings, QpSolver, QpStatus,
    QpWeights, WarmStart,
};

/// Workspace margin kept when projecting swing targets, m.
const TARGET_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyCommand {
    pub target_pose: BodyPose,
    /// `(v, ω)`, world frame.
    pub target_twist: Vector6<f64>,
}

impl BodyCommand {
    /// Hold position at `(0, 0, height)` facing `yaw`, zero velocity.
    pub fn hold(height: f64, yaw: f64) -> Self {
        Self {
            target_pose: BodyPose::new(Vector3::new(0.0, 0.0, height), Vector3::new(0.0, 0.0, yaw)),
            target_twist: Vector6::zeros(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.target_pose.is_finite()
            && self.target_twist.iter().all(|v| v.is_finite())
            && self.target_pose.position.z > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSet {
    pub pose_kp: Vector6<f64>,
    pub pose_kd: Vector6<f64>,
    /// N/m, per axis.
    pub swing_kp: f64,
    /// N·s/m.
    pub swing_kd: f64,
    /// Foot placement gain `k`, s.
    pub placement_gain: f64,
    /// Peak swing-foot lift above the ground, m.
    pub swing_apex: f64,
}

impl Default for GainSet {
    fn default() -> Self {
        Self {
            pose_kp: Vector6::new(50.0, 50.0, 150.0, 200.0, 200.0, 50.0),
            pose_kd: Vector6::new(40.0, 40.0, 20.0, 20.0, 20.0, 10.0),
            swing_kp: 300.0,
            swing_kd: 15.0,
            placement_gain: 0.2,
            swing_apex: 0.08,
        }
    }
}

impl GainSet {
    pub fn is_valid(&self) -> bool {
        self.pose_kp
            .iter()
            .chain(self.pose_kd.iter())
            .chain([self.swing_kp, self.swing_kd, self.placement_gain, self.swing_apex].iter())
            .all(|g| *g >= 0.0 && g.is_finite())
    }
}

/// Per-tick inputs that are not part of the rigid-body state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickContext {
    /// Progress through the current primitive, in [0, 1].
    pub phase: f64,
    /// Foot velocities relative to the base, world-aligned axes.
    pub foot_velocities: [Vector3<f64>; NUM_FEET],
    /// Velocity of the surface under the stance feet, world frame. Foot
    /// placement measures body velocity relative to it.
    pub ground_velocity: Vector3<f64>,
}

impl TickContext {
    pub fn at_phase(phase: f64) -> Self {
        Self {
            phase,
            foot_velocities: [Vector3::zeros(); NUM_FEET],
            ground_velocity: Vector3::zeros(),
        }
    }

    /// End of a swing: targets sit on the ground.
    pub fn touchdown() -> Self {
        Self::at_phase(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingTargets {
    /// Targets relative to the base, world-aligned axes.
    pub targets: [Vector3<f64>; NUM_FEET],
    /// Set where the raw placement had to be pulled into the workspace.
    pub clamped: [bool; NUM_FEET],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub torques: JointTorques,
    /// Ground reaction forces on stance feet from the QP; zero on swing feet.
    pub foot_forces: FootForces,
    /// PD forces on swing feet; zero on stance feet.
    pub swing_forces: FootForces,
    pub qp_cost: f64,
    pub qp_status: QpStatus,
    pub swing_targets: [Vector3<f64>; NUM_FEET],
}

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Stance/swing-separated PD acceleration target.
///
/// Linear rows: `kp (p_d − p) + kd (v_d − v)`. Angular rows are computed in
/// Euler-angle space on wrapped angle differences and mapped to world angular
/// acceleration with `ω ≈ Rz(ψ) Θ̇`.
pub fn target_acceleration(command: &BodyCommand, state: &RobotState, gains: &GainSet) -> Vector6<f64> {
    let kp = &gains.pose_kp;
    let kd = &gains.pose_kd;
    let pos_err = command.target_pose.position - state.pose.position;
    let vel_err = command.target_twist.fixed_rows::<3>(0) - state.twist.fixed_rows::<3>(0);

    let yaw = state.pose.yaw();
    let ang_err = (command.target_pose.orientation - state.pose.orientation).map(wrap_angle);
    let rate = angular_velocity_to_euler_rates(yaw, &state.angular_velocity());
    let rate_d = angular_velocity_to_euler_rates(yaw, &command.target_twist.fixed_rows::<3>(3).into_owned());
    let rate_err = rate_d - rate;

    let mut out = Vector6::zeros();
    let mut euler_acc = Vector3::zeros();
    for i in 0..3 {
        out[i] = kp[i] * pos_err[i] + kd[i] * vel_err[i];
        euler_acc[i] = kp[3 + i] * ang_err[i] + kd[3 + i] * rate_err[i];
    }
    out.fixed_rows_mut::<3>(3).copy_from(&(rot_z(yaw) * euler_acc));
    out
}

/// Placement targets `p₀ + k (v − v_d)` with a half-sine lift over the swing.
///
/// The horizontal offset uses the planar velocity error, with `v` measured
/// relative to `ground_velocity`; the vertical target is the ground plus
/// `apex · sin(π · phase)`, so it lands at touchdown.
pub fn swing_targets(
    state: &RobotState,
    command: &BodyCommand,
    params: &PhysicalParams,
    gains: &GainSet,
    phase: f64,
    ground_velocity: &Vector3<f64>,
) -> SwingTargets {
    let yaw_rot = rot_z(state.pose.yaw());
    let body_rot = state.pose.rotation();
    let vel_err = state.linear_velocity() - ground_velocity - command.target_twist.fixed_rows::<3>(0);
    let offset = Vector3::new(vel_err.x, vel_err.y, 0.0) * gains.placement_gain;
    let phase = phase.clamp(0.0, 1.0);
    let lift = gains.swing_apex * (std::f64::consts::PI * phase).sin();
    let height = state.pose.position.z;

    let mut targets = [Vector3::zeros(); NUM_FEET];
    let mut clamped = [false; NUM_FEET];
    for i in 0..NUM_FEET {
        let mut raw = yaw_rot * params.default_foot_positions[i] + offset;
        raw.z = -height + lift;
        let in_body = body_rot.transpose() * raw;
        let (projected, was_clamped) = project_to_workspace(i, &in_body, params, TARGET_MARGIN);
        targets[i] = body_rot * projected;
        clamped[i] = was_clamped;
    }
    SwingTargets { targets, clamped }
}

/// `kp (p_d − p) − kd ṗ` on swing feet, zero on stance feet.
pub fn swing_forces(
    targets: &[Vector3<f64>; NUM_FEET],
    state: &RobotState,
    foot_velocities: &[Vector3<f64>; NUM_FEET],
    gains: &GainSet,
    pattern: &ContactPattern,
) -> FootForces {
    let mut out = FootForces::zero();
    for i in 0..NUM_FEET {
        if pattern.swing[i] {
            out.forces[i] = (targets[i] - state.foot_positions[i]) * gains.swing_kp - foot_velocities[i] * gains.swing_kd;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct LowLevelController {
    pub params: PhysicalParams,
    pub gains: GainSet,
    pub weights: QpWeights,
    solver: QpSolver,
    warm: Vec<Option<WarmStart>>,
}

impl LowLevelController {
    pub fn new(params: PhysicalParams, gains: GainSet, weights: QpWeights, qp: QpSettings) -> Self {
        Self {
            params,
            gains,
            weights,
            solver: QpSolver::new(qp),
            warm: vec![None; 16],
        }
    }

    pub fn limits(&self) -> ContactLimits {
        ContactLimits {
            mu: self.params.friction_mu,
            fz_min: self.params.fz_min,
            friction: self.weights.friction_rows(),
        }
    }

    pub fn clear_warm_start(&mut self) {
        self.warm.iter_mut().for_each(|w| *w = None);
    }

    pub fn swing_targets(&self, state: &RobotState, command: &BodyCommand, ctx: &TickContext) -> SwingTargets {
        swing_targets(state, command, &self.params, &self.gains, ctx.phase, &ctx.ground_velocity)
    }

    fn solve_forces(
        &mut self,
        state: &RobotState,
        accel: &Vector6<f64>,
        pattern: &ContactPattern,
        warm: bool,
    ) -> Result<(FootForces, f64, QpStatus), ControlError> {
        let m = build_m(state, &self.params)?;
        let g = gravity_augmented(&self.params.gravity);
        let problem = build_force_qp(accel, &m, &g, pattern, &self.weights, &self.limits())?;
        let slot = pattern.index();
        let start = if warm { self.warm[slot].as_ref() } else { None };
        let sol = self.solver.solve_warm(&problem, start)?;
        match sol.status {
            QpStatus::Solved => {}
            QpStatus::MaxIterations => log::warn!(
                "force QP hit the iteration cap (primal {:.2e}, dual {:.2e}); using best iterate",
                sol.primal_residual,
                sol.dual_residual
            ),
            QpStatus::Infeasible => log::warn!("force QP reported infeasible for pattern {pattern}"),
        }
        let mut forces = FootForces::from_stacked(sol.x.as_slice());
        for i in 0..NUM_FEET {
            if pattern.swing[i] {
                forces.forces[i] = Vector3::zeros();
            }
        }
        if warm && sol.is_solved() {
            self.warm[slot] = Some(WarmStart::from(&sol));
        }
        let cost = force_qp_cost(accel, &m, &g, &self.weights, &forces);
        Ok((forces, cost, sol.status))
    }

    /// Optimal force-QP cost at `state` under `pattern`, solved cold so the
    /// answer does not depend on call history.
    pub fn evaluate_qp_cost(&mut self, state: &RobotState, command: &BodyCommand, pattern: &ContactPattern) -> f64 {
        let accel = target_acceleration(command, state, &self.gains);
        match self.solve_forces(state, &accel, pattern, false) {
            Ok((_, cost, _)) => cost,
            Err(_) => f64::INFINITY,
        }
    }

    pub fn control_tick(
        &mut self,
        state: &RobotState,
        joints: &JointState,
        command: &BodyCommand,
        pattern: &ContactPattern,
        ctx: &TickContext,
    ) -> Result<ControlOutput, ControlError> {
        let accel = target_acceleration(command, state, &self.gains);
        let (ground, qp_cost, qp_status) = self.solve_forces(state, &accel, pattern, true)?;

        let targets = self.swing_targets(state, command, ctx);
        let swing = swing_forces(&targets.targets, state, &ctx.foot_velocities, &self.gains, pattern);

        // Legs push on the ground with the negated reaction; swing legs apply
        // their PD force directly. Both are rotated into the body frame.
        let body_rot_t = state.pose.rotation().transpose();
        let mut leg_forces = FootForces::zero();
        for i in 0..NUM_FEET {
            let world = if pattern.swing[i] { swing.forces[i] } else { -ground.forces[i] };
            leg_forces.forces[i] = body_rot_t * world;
        }
        let torques = torques_from_forces(joints, &leg_forces, &self.params).clamped(self.params.joint_limits.torque);

        Ok(ControlOutput {
            torques,
            foot_forces: ground,
            swing_forces: swing,
            qp_cost,
            qp_status,
            swing_targets: targets.targets,
        })
    }
}
