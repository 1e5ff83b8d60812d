//! Three-joint leg model (hip roll about body x, hip pitch and knee about y).
//!
//! In the hip-roll frame the foot sits at
//! `(−L₁ sin q₁ − L₂ sin(q₁+q₂), ±d, −L₁ cos q₁ − L₂ cos(q₁+q₂))`, which is
//! then rotated about x by the roll angle and offset by the hip position.
//! Positive knee angles give the knee-backward branch, which is the only one
//! the inverse kinematics returns.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{rot_x, FootForces, PhysicalParams, NUM_FEET};

/// Knee angles below this are reported as near-singular.
pub const NEAR_SINGULAR_KNEE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("target for leg {leg} is outside the reachable workspace (distance {distance:.4} m)")]
    Unreachable { leg: usize, distance: f64 },
}

/// Joint angles for all legs: `[hip roll, hip pitch, knee]` per leg, legs in
/// LF, RF, LR, RR order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub angles: SVector<f64, 12>,
}

impl JointState {
    pub fn leg(&self, leg: usize) -> Vector3<f64> {
        self.angles.fixed_rows::<3>(3 * leg).into_owned()
    }

    pub fn set_leg(&mut self, leg: usize, q: &Vector3<f64>) {
        self.angles.fixed_rows_mut::<3>(3 * leg).copy_from(q);
    }

    pub fn within_limits(&self, params: &PhysicalParams) -> bool {
        let lim = &params.joint_limits;
        (0..NUM_FEET).all(|leg| {
            let q = self.leg(leg);
            let inside = |v: f64, b: [f64; 2]| v >= b[0] && v <= b[1];
            inside(q.x, lim.hip_roll) && inside(q.y, lim.hip_pitch) && inside(q.z, lim.knee)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointTorques {
    pub torques: SVector<f64, 12>,
}

impl JointTorques {
    pub fn squared_norm(&self) -> f64 {
        self.torques.norm_squared()
    }

    /// Saturates every joint at `±limit`.
    pub fn clamped(&self, limit: f64) -> Self {
        Self {
            torques: self.torques.map(|t| t.clamp(-limit, limit)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub angles: Vector3<f64>,
    /// Set when the leg is (numerically) fully extended.
    pub near_singular: bool,
}

fn planar_chain(params: &PhysicalParams, pitch: f64, knee: f64) -> (f64, f64) {
    let l = params.link_lengths;
    let x = -l.thigh * pitch.sin() - l.shank * (pitch + knee).sin();
    let z = -l.thigh * pitch.cos() - l.shank * (pitch + knee).cos();
    (x, z)
}

/// Foot position relative to the base, body frame.
pub fn forward_kinematics(leg: usize, q: &Vector3<f64>, params: &PhysicalParams) -> Vector3<f64> {
    let (x, z) = planar_chain(params, q.y, q.z);
    let d = PhysicalParams::side_sign(leg) * params.abduction_offset;
    params.hip_offsets[leg] + rot_x(q.x) * Vector3::new(x, d, z)
}

/// Upper bound on the hip-to-foot distance.
pub fn max_reach(params: &PhysicalParams) -> f64 {
    params.link_lengths.reach().hypot(params.abduction_offset)
}

pub fn inverse_kinematics(
    leg: usize,
    target: &Vector3<f64>,
    params: &PhysicalParams,
) -> Result<IkSolution, KinematicsError> {
    let l = params.link_lengths;
    let rel = target - params.hip_offsets[leg];
    let d = PhysicalParams::side_sign(leg) * params.abduction_offset;

    let yz_sq = rel.y * rel.y + rel.z * rel.z;
    let plane_sq = yz_sq - d * d;
    let unreachable = || KinematicsError::Unreachable {
        leg,
        distance: rel.norm(),
    };
    if plane_sq < 0.0 {
        return Err(unreachable());
    }
    // Leg hangs below the hip in the roll frame.
    let z_plane = -plane_sq.sqrt();
    let roll = rel.z.atan2(rel.y) - z_plane.atan2(d);

    let reach_sq = rel.x * rel.x + z_plane * z_plane;
    let cos_knee = (reach_sq - l.thigh * l.thigh - l.shank * l.shank) / (2.0 * l.thigh * l.shank);
    const SLACK: f64 = 1e-9;
    if !(-1.0 - SLACK..=1.0 + SLACK).contains(&cos_knee) {
        return Err(unreachable());
    }
    let knee = cos_knee.clamp(-1.0, 1.0).acos();
    let pitch = (-rel.x).atan2(-z_plane) - (l.shank * knee.sin()).atan2(l.thigh + l.shank * knee.cos());

    Ok(IkSolution {
        angles: Vector3::new(crate::model::wrap_angle(roll), pitch, knee),
        near_singular: knee < NEAR_SINGULAR_KNEE,
    })
}

/// Pulls `target` back inside the leg workspace, toward the nominal foot.
/// Returns the projected point and whether projection was needed.
pub fn project_to_workspace(leg: usize, target: &Vector3<f64>, params: &PhysicalParams, margin: f64) -> (Vector3<f64>, bool) {
    if inverse_kinematics(leg, target, params).is_ok() && (target - params.hip_offsets[leg]).norm() <= max_reach(params) - margin {
        return (*target, false);
    }
    let hip = params.hip_offsets[leg];
    // Bisection along the segment from the nominal foot position, which is
    // inside the workspace for any sane geometry.
    let nominal = params.default_foot_positions[leg];
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let point = |s: f64| nominal + (target - nominal) * s;
    let ok = |p: &Vector3<f64>| inverse_kinematics(leg, p, params).is_ok() && (p - hip).norm() <= max_reach(params) - margin;
    if !ok(&nominal) {
        return (nominal, true);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(&point(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (point(lo), true)
}

/// `∂ foot / ∂ q` for one leg, body frame.
pub fn jacobian(leg: usize, q: &Vector3<f64>, params: &PhysicalParams) -> Matrix3<f64> {
    let l = params.link_lengths;
    let d = PhysicalParams::side_sign(leg) * params.abduction_offset;
    let (_, z) = planar_chain(params, q.y, q.z);
    let (s0, c0) = q.x.sin_cos();
    let q12 = q.y + q.z;

    // d/dq0 of Rx(q0) * (x, d, z)
    let col0 = Vector3::new(0.0, -s0 * d - c0 * z, c0 * d - s0 * z);
    let dq1 = Vector3::new(-l.thigh * q.y.cos() - l.shank * q12.cos(), 0.0, l.thigh * q.y.sin() + l.shank * q12.sin());
    let dq2 = Vector3::new(-l.shank * q12.cos(), 0.0, l.shank * q12.sin());
    let r = rot_x(q.x);
    Matrix3::from_columns(&[col0, r * dq1, r * dq2])
}

/// `τ_leg = J_legᵀ f_leg` for every leg. Forces must be expressed in the body
/// frame, the same frame the Jacobian differentiates.
pub fn torques_from_forces(joints: &JointState, f: &FootForces, params: &PhysicalParams) -> JointTorques {
    let mut out = JointTorques::default();
    for leg in 0..NUM_FEET {
        let j = jacobian(leg, &joints.leg(leg), params);
        let tau = j.transpose() * f.forces[leg];
        out.torques.fixed_rows_mut::<3>(3 * leg).copy_from(&tau);
    }
    out
}
