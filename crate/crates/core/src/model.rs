//! Robot state, physical constants and centroidal dynamics.
//!
//! Two forms of the floating-base dynamics live here:
//!
//! - [`nonlinear_centroidal`]: `p̈ = Σf/m − g`, `I ω̇ = Σ pᵢ × fᵢ` with the
//!   world inertia rotated by the full Z-Y-X Euler rotation. The simulator
//!   integrates this one.
//! - [`build_m`] + [`linear_dynamics`]: `q̈ = M f − g̃`, where the inertia is
//!   rotated by yaw only. This is what the force QP sees.
//!
//! The two agree exactly when roll and pitch are zero. Coriolis terms
//! `ω × Iω` are dropped in both.
//!
//! Foot positions in [`RobotState`] are offsets from the base origin expressed
//! in world-aligned axes, which is the frame both dynamics forms use.

use nalgebra::{Matrix3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_FEET: usize = 4;

/// Foot order used everywhere: left-front, right-front, left-rear, right-rear.
pub const FOOT_NAMES: [&str; NUM_FEET] = ["LF", "RF", "LR", "RR"];

pub type Matrix6x12 = SMatrix<f64, 6, 12>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("inertia matrix is singular or not positive-definite")]
    SingularInertia,
    #[error("invalid physical parameter: {0}")]
    InvalidParams(String),
}

/// Position (m, world) and Z-Y-X Euler orientation `(roll, pitch, yaw)` in rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyPose {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

impl BodyPose {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn roll(&self) -> f64 {
        self.orientation.x
    }

    pub fn pitch(&self) -> f64 {
        self.orientation.y
    }

    pub fn yaw(&self) -> f64 {
        self.orientation.z
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.orientation.iter()).all(|v| v.is_finite())
    }

    /// Roll and pitch strictly inside (−π/2, π/2), where the Euler
    /// parameterization and the small-angle model make sense.
    pub fn within_linearization_range(&self) -> bool {
        let half_pi = std::f64::consts::FRAC_PI_2;
        self.is_finite() && self.roll().abs() < half_pi && self.pitch().abs() < half_pi
    }

    /// Full rotation body → world.
    pub fn rotation(&self) -> Matrix3<f64> {
        euler_zyx_rotation(self.orientation)
    }
}

/// Floating-base state: pose, twist `(v, ω)` in world frame, and foot offsets
/// from the base origin (world-aligned axes), ordered LF, RF, LR, RR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: BodyPose,
    pub twist: Vector6<f64>,
    pub foot_positions: [Vector3<f64>; NUM_FEET],
}

impl RobotState {
    pub fn linear_velocity(&self) -> Vector3<f64> {
        self.twist.fixed_rows::<3>(0).into_owned()
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.twist.fixed_rows::<3>(3).into_owned()
    }

    /// Foot offset `i` expressed in the body frame.
    pub fn foot_in_body(&self, i: usize) -> Vector3<f64> {
        self.pose.rotation().transpose() * self.foot_positions[i]
    }
}

/// Ground reaction (or leg) forces per foot, N, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FootForces {
    pub forces: [Vector3<f64>; NUM_FEET],
}

impl FootForces {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Stacked `(f₁, f₂, f₃, f₄)` as a 12-vector.
    pub fn stacked(&self) -> SMatrix<f64, 12, 1> {
        let mut out = SMatrix::<f64, 12, 1>::zeros();
        for (i, f) in self.forces.iter().enumerate() {
            out.fixed_rows_mut::<3>(3 * i).copy_from(f);
        }
        out
    }

    pub fn from_stacked(v: &[f64]) -> Self {
        assert_eq!(v.len(), 3 * NUM_FEET, "stacked force vector must have 12 entries");
        let mut forces = [Vector3::zeros(); NUM_FEET];
        for (i, f) in forces.iter_mut().enumerate() {
            *f = Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        }
        Self { forces }
    }
}

/// Thigh and shank lengths, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkLengths {
    pub thigh: f64,
    pub shank: f64,
}

impl Default for LinkLengths {
    fn default() -> Self {
        Self {
            thigh: 0.25,
            shank: 0.25,
        }
    }
}

impl LinkLengths {
    pub fn reach(&self) -> f64 {
        self.thigh + self.shank
    }
}

/// Per-joint limits (rad) and torque limit (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointLimits {
    pub hip_roll: [f64; 2],
    pub hip_pitch: [f64; 2],
    pub knee: [f64; 2],
    pub torque: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            hip_roll: [-0.8, 0.8],
            hip_pitch: [-2.0, 2.0],
            knee: [0.1, 2.7],
            torque: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub mass: f64,
    /// Body-frame inertia, kg·m².
    pub body_inertia: Matrix3<f64>,
    /// Gravity acceleration vector; points along −z.
    pub gravity: Vector3<f64>,
    pub friction_mu: f64,
    pub fz_min: f64,
    /// Nominal stance foot positions relative to the base, body frame.
    pub default_foot_positions: [Vector3<f64>; NUM_FEET],
    /// Hip-roll joint positions relative to the base, body frame.
    pub hip_offsets: [Vector3<f64>; NUM_FEET],
    /// Lateral distance from the hip-roll axis to the thigh plane; mirrored
    /// to −y for right legs.
    pub abduction_offset: f64,
    pub link_lengths: LinkLengths,
    pub joint_limits: JointLimits,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let abduction = 0.037;
        let (fx, fy, fz) = (0.21, 0.13, -0.40);
        let hip_z = 0.05;
        let sides = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
        Self {
            mass: 22.0,
            body_inertia: Matrix3::from_diagonal(&Vector3::new(0.07, 0.26, 0.24)),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            friction_mu: 0.6,
            fz_min: 5.0,
            default_foot_positions: sides.map(|(sx, sy)| Vector3::new(sx * fx, sy * fy, fz)),
            hip_offsets: sides.map(|(sx, sy)| Vector3::new(sx * fx, sy * (fy - abduction), hip_z)),
            abduction_offset: abduction,
            link_lengths: LinkLengths::default(),
            joint_limits: JointLimits::default(),
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidParams(msg.to_string()));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass must be positive");
        }
        if !(self.friction_mu >= 0.0) {
            return bad("friction_mu must be non-negative");
        }
        if !(self.fz_min >= 0.0) {
            return bad("fz_min must be non-negative");
        }
        if (self.body_inertia - self.body_inertia.transpose()).amax() > 1e-12 {
            return bad("body_inertia must be symmetric");
        }
        if self.body_inertia.cholesky().is_none() {
            return Err(ModelError::SingularInertia);
        }
        if !(self.link_lengths.thigh > 0.0 && self.link_lengths.shank > 0.0) {
            return bad("link lengths must be positive");
        }
        Ok(())
    }

    pub fn gravity_magnitude(&self) -> f64 {
        self.gravity.norm()
    }

    /// `+1` for left legs (LF, LR), `−1` for right legs.
    pub fn side_sign(leg: usize) -> f64 {
        if leg.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

pub fn rot_z(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_y(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_x(phi: f64) -> Matrix3<f64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// `Rz(ψ) Ry(θ) Rx(φ)` for Euler angles `(φ, θ, ψ)`.
pub fn euler_zyx_rotation(rpy: Vector3<f64>) -> Matrix3<f64> {
    rot_z(rpy.z) * rot_y(rpy.y) * rot_x(rpy.x)
}

/// Cross-product matrix: `skew(p) * v == p × v`.
pub fn skew(p: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0)
}

/// Yaw-rotated inertia `Rz(ψ) I_B Rz(ψ)ᵀ`.
pub fn inertia_world(psi: f64, body_inertia: &Matrix3<f64>) -> Matrix3<f64> {
    let r = rot_z(psi);
    r * body_inertia * r.transpose()
}

/// Euler rates → world angular velocity under the small roll/pitch model.
pub fn euler_rates_to_angular_velocity(psi: f64, euler_rates: &Vector3<f64>) -> Vector3<f64> {
    rot_z(psi) * euler_rates
}

/// Inverse of [`euler_rates_to_angular_velocity`].
pub fn angular_velocity_to_euler_rates(psi: f64, omega: &Vector3<f64>) -> Vector3<f64> {
    rot_z(psi).transpose() * omega
}

/// Augmented gravity `g̃ = (g, 0₃)`.
pub fn gravity_augmented(gravity: &Vector3<f64>) -> Vector6<f64> {
    let mut g = Vector6::zeros();
    g.fixed_rows_mut::<3>(0).copy_from(gravity);
    g
}

/// The 6×12 map from stacked foot forces to base acceleration.
///
/// Top rows: `I₃/m` per foot. Bottom rows: `(Rz I_B Rzᵀ)⁻¹ [pᵢ]ₓ`, the angular
/// acceleration produced by a unit force at foot `i` under the yaw-rotated
/// inertia.
pub fn build_m(state: &RobotState, params: &PhysicalParams) -> Result<Matrix6x12, ModelError> {
    let inertia = inertia_world(state.pose.yaw(), &params.body_inertia);
    let inv_inertia = inertia.try_inverse().ok_or(ModelError::SingularInertia)?;
    if !inv_inertia.iter().all(|v| v.is_finite()) {
        return Err(ModelError::SingularInertia);
    }
    let inv_mass = Matrix3::identity() / params.mass;
    let mut m = Matrix6x12::zeros();
    for (i, p) in state.foot_positions.iter().enumerate() {
        m.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&inv_mass);
        m.fixed_view_mut::<3, 3>(3, 3 * i).copy_from(&(inv_inertia * skew(p)));
    }
    Ok(m)
}

/// `q̈ = M f − g̃`. Note that `gravity` is the gravity vector (pointing down),
/// so "minus g̃" adds `(0, 0, −9.81)` to the linear rows.
pub fn linear_dynamics(m: &Matrix6x12, f: &FootForces, gravity: &Vector3<f64>) -> Vector6<f64> {
    m * f.stacked() + gravity_augmented(gravity)
}

/// General centroidal dynamics with full-rotation world inertia.
pub fn nonlinear_centroidal(
    state: &RobotState,
    f: &FootForces,
    params: &PhysicalParams,
) -> Result<Vector6<f64>, ModelError> {
    let r = state.pose.rotation();
    let inertia = r * params.body_inertia * r.transpose();
    let chol = inertia.cholesky().ok_or(ModelError::SingularInertia)?;

    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for (p, fi) in state.foot_positions.iter().zip(f.forces.iter()) {
        force += fi;
        torque += p.cross(fi);
    }
    let lin = force / params.mass + params.gravity;
    let ang = chol.solve(&torque);
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&lin);
    out.fixed_rows_mut::<3>(3).copy_from(&ang);
    Ok(out)
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn standing_state(params: &PhysicalParams, yaw: f64) -> RobotState {
        let r = rot_z(yaw);
        RobotState {
            pose: BodyPose::new(Vector3::new(0.0, 0.0, 0.4), Vector3::new(0.0, 0.0, yaw)),
            twist: Vector6::zeros(),
            foot_positions: params.default_foot_positions.map(|p| r * p),
        }
    }

    #[test]
    fn rot_z_cases() {
        assert_eq!(rot_z(0.0), Matrix3::identity());
        let v = rot_z(FRAC_PI_2) * Vector3::x();
        assert_relative_eq!(v, Vector3::y(), epsilon = 1e-15);
        let r = rot_z(0.3);
        assert!((r.transpose() * r - Matrix3::identity()).amax() <= 1e-12);
        assert!((r.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn skew_cases() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(skew(&Vector3::x()) * Vector3::y(), Vector3::z());
        let s = skew(&Vector3::new(0.3, -1.2, 2.0));
        assert_eq!(s, -s.transpose());
    }

    #[test]
    fn inertia_world_cases() {
        let ib = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(inertia_world(0.0, &ib), ib);
        let iso = Matrix3::identity() * 0.7;
        assert_relative_eq!(inertia_world(1.1, &iso), iso, epsilon = 1e-15);
        let rotated = inertia_world(FRAC_PI_2, &ib);
        let expect = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 3.0));
        assert_relative_eq!(rotated, expect, epsilon = 1e-14);
    }

    #[test]
    fn m_top_block_structure() {
        let params = PhysicalParams::default();
        let m = build_m(&standing_state(&params, 0.4), &params).unwrap();
        for foot in 0..4 {
            for r in 0..3 {
                for c in 0..3 {
                    let expect = if r == c { 1.0 / params.mass } else { 0.0 };
                    assert_eq!(m[(r, 3 * foot + c)], expect);
                }
            }
        }
    }

    #[test]
    fn symmetric_vertical_forces_have_no_angular_effect() {
        let params = PhysicalParams::default();
        let m = build_m(&standing_state(&params, 0.0), &params).unwrap();
        let f = FootForces {
            forces: [Vector3::z(); 4],
        };
        let acc = m * f.stacked();
        assert!(acc.fixed_rows::<3>(3).amax() < 1e-14);
    }

    #[test]
    fn singular_inertia_rejected() {
        let params = PhysicalParams {
            body_inertia: Matrix3::zeros(),
            ..Default::default()
        };
        let state = standing_state(&PhysicalParams::default(), 0.0);
        assert_eq!(build_m(&state, &params), Err(ModelError::SingularInertia));
        assert_eq!(
            nonlinear_centroidal(&state, &FootForces::zero(), &params),
            Err(ModelError::SingularInertia)
        );
    }

    #[test]
    fn free_fall_and_gravity_compensation() {
        let params = PhysicalParams::default();
        let state = standing_state(&params, 0.0);
        let m = build_m(&state, &params).unwrap();
        let acc = linear_dynamics(&m, &FootForces::zero(), &params.gravity);
        assert_eq!(acc, Vector6::new(0.0, 0.0, -9.81, 0.0, 0.0, 0.0));

        let fz = params.mass * params.gravity_magnitude() / 4.0;
        let f = FootForces {
            forces: [Vector3::new(0.0, 0.0, fz); 4],
        };
        assert!(linear_dynamics(&m, &f, &params.gravity).amax() < 1e-12);
    }

    #[test]
    fn hand_evaluated_single_foot_torque() {
        let params = PhysicalParams {
            mass: 1.0,
            body_inertia: Matrix3::identity(),
            ..Default::default()
        };
        let mut state = standing_state(&params, 0.0);
        state.foot_positions = [Vector3::new(1.0, 0.0, 0.0), Vector3::zeros(), Vector3::zeros(), Vector3::zeros()];
        let mut f = FootForces::zero();
        f.forces[0] = Vector3::new(0.0, 0.0, 1.0);
        let acc = nonlinear_centroidal(&state, &f, &params).unwrap();
        assert_relative_eq!(acc, Vector6::new(0.0, 0.0, 1.0 - 9.81, 0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn wrap_angle_short_way() {
        assert_relative_eq!(wrap_angle(-3.1 - 3.1), 2.0 * PI - 6.2, epsilon = 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
    }

    #[test]
    fn default_params_valid() {
        PhysicalParams::default().validate().unwrap();
    }
}
