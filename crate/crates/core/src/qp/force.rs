//! Ground-reaction-force allocation as a QP.
//!
//! Minimizes `‖M f − g̃ − q̈_d‖²_Q + ‖f‖²_R` over the stacked foot forces.
//! Stance feet get `f_z ≥ f_z,min` plus a four-sided friction pyramid, swing
//! feet are pinned to zero force.

use nalgebra::{DMatrix, DVector, SVector, Vector6};
use serde::{Deserialize, Serialize};

use super::{QpError, QpProblem};
use crate::model::{FootForces, Matrix6x12, NUM_FEET};
use crate::primitives::ContactPattern;

/// Diagonals of the Q (acceleration error) and R (force) weights, and the
/// friction-row form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpWeights {
    pub q_weight: Vector6<f64>,
    pub r_weight: SVector<f64, 12>,
    /// Use the inverted `−μ f_t ≤ f_z ≤ μ f_t` rows instead of the pyramid.
    pub friction_as_printed: bool,
}

impl Default for QpWeights {
    fn default() -> Self {
        Self {
            q_weight: Vector6::new(1.0, 1.0, 10.0, 20.0, 20.0, 5.0),
            r_weight: SVector::from_element(1e-4),
            friction_as_printed: false,
        }
    }
}

impl QpWeights {
    pub fn is_valid(&self) -> bool {
        self.q_weight.iter().chain(self.r_weight.iter()).all(|w| *w >= 0.0 && w.is_finite())
            && self.q_weight.iter().any(|w| *w > 0.0)
    }

    pub fn friction_rows(&self) -> FrictionRows {
        if self.friction_as_printed {
            FrictionRows::AsPrinted
        } else {
            FrictionRows::Pyramid
        }
    }
}

/// Which inequality rows encode friction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionRows {
    /// `|f_x| ≤ μ f_z`, `|f_y| ≤ μ f_z`.
    #[default]
    Pyramid,
    /// `−μ f_x ≤ f_z ≤ μ f_x` (and the same in y), kept only to compare
    /// against the dimensionally inverted form.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactLimits {
    pub mu: f64,
    pub fz_min: f64,
    pub friction: FrictionRows,
}

/// Number of constraint rows: 5 per stance foot, 3 per swing foot.
fn row_count(pattern: &ContactPattern) -> usize {
    pattern.swing.iter().map(|&s| if s { 3 } else { 5 }).sum()
}

pub fn build_force_qp(
    accel_target: &Vector6<f64>,
    m: &Matrix6x12,
    gravity_aug: &Vector6<f64>,
    pattern: &ContactPattern,
    weights: &QpWeights,
    limits: &ContactLimits,
) -> Result<QpProblem, QpError> {
    let q_diag = nalgebra::Matrix6::from_diagonal(&weights.q_weight);
    // q̈ = M f + gravity_aug; the residual against the target is M f − b.
    let b = accel_target - gravity_aug;
    let mtq = m.transpose() * q_diag;
    let mut p = (mtq * m) * 2.0;
    for i in 0..12 {
        p[(i, i)] += 2.0 * weights.r_weight[i];
    }
    // Exact symmetry regardless of rounding in the product.
    let p = (p + p.transpose()) * 0.5;
    let q = mtq * b * -2.0;

    let rows = row_count(pattern);
    let mut a = DMatrix::zeros(rows, 12);
    let mut lower = DVector::from_element(rows, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(rows, f64::INFINITY);
    let mut r = 0;
    let mu = limits.mu;
    for foot in 0..NUM_FEET {
        let (cx, cy, cz) = (3 * foot, 3 * foot + 1, 3 * foot + 2);
        if pattern.swing[foot] {
            for c in [cx, cy, cz] {
                a[(r, c)] = 1.0;
                lower[r] = 0.0;
                upper[r] = 0.0;
                r += 1;
            }
            continue;
        }
        a[(r, cz)] = 1.0;
        lower[r] = limits.fz_min;
        r += 1;
        for ct in [cx, cy] {
            match limits.friction {
                FrictionRows::Pyramid => {
                    // f_t − μ f_z ≤ 0
                    a[(r, ct)] = 1.0;
                    a[(r, cz)] = -mu;
                    upper[r] = 0.0;
                    // f_t + μ f_z ≥ 0
                    a[(r + 1, ct)] = 1.0;
                    a[(r + 1, cz)] = mu;
                    lower[r + 1] = 0.0;
                }
                FrictionRows::AsPrinted => {
                    // f_z − μ f_t ≤ 0
                    a[(r, cz)] = 1.0;
                    a[(r, ct)] = -mu;
                    upper[r] = 0.0;
                    // f_z + μ f_t ≥ 0
                    a[(r + 1, cz)] = 1.0;
                    a[(r + 1, ct)] = mu;
                    lower[r + 1] = 0.0;
                }
            }
            r += 2;
        }
    }
    debug_assert_eq!(r, rows);

    QpProblem::new(
        DMatrix::from_iterator(12, 12, p.iter().copied()),
        DVector::from_iterator(12, q.iter().copied()),
        a,
        lower,
        upper,
    )
}

/// `‖M f − g̃ − q̈_d‖²_Q + ‖f‖²_R` evaluated directly.
pub fn force_qp_cost(
    accel_target: &Vector6<f64>,
    m: &Matrix6x12,
    gravity_aug: &Vector6<f64>,
    weights: &QpWeights,
    f: &FootForces,
) -> f64 {
    let stacked = f.stacked();
    let err = m * stacked + gravity_aug - accel_target;
    let tracking: f64 = err.iter().zip(weights.q_weight.iter()).map(|(e, w)| w * e * e).sum();
    let effort: f64 = stacked.iter().zip(weights.r_weight.iter()).map(|(f, w)| w * f * f).sum();
    tracking + effort
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_m, gravity_augmented, BodyPose, PhysicalParams, RobotState};
    use crate::qp::QpSolver;
    use nalgebra::Vector3;

    fn setup() -> (PhysicalParams, Matrix6x12, Vector6<f64>) {
        let params = PhysicalParams::default();
        let state = RobotState {
            pose: BodyPose::new(Vector3::new(0.0, 0.0, 0.4), Vector3::zeros()),
            twist: Vector6::zeros(),
            foot_positions: params.default_foot_positions,
        };
        let m = build_m(&state, &params).unwrap();
        let g = gravity_augmented(&params.gravity);
        (params, m, g)
    }

    fn limits(params: &PhysicalParams) -> ContactLimits {
        ContactLimits {
            mu: params.friction_mu,
            fz_min: params.fz_min,
            friction: FrictionRows::Pyramid,
        }
    }

    #[test]
    fn all_swing_forces_zero() {
        let (params, m, g) = setup();
        let pattern = ContactPattern { swing: [true; 4] };
        let prob = build_force_qp(&Vector6::zeros(), &m, &g, &pattern, &QpWeights::default(), &limits(&params)).unwrap();
        assert_eq!(prob.num_constraints(), 12);
        let sol = QpSolver::default().solve(&prob).unwrap();
        assert!(sol.is_solved());
        assert!(sol.x.amax() <= 1e-8);
    }

    #[test]
    fn printed_rows_bound_the_normal_force() {
        let (params, m, g) = setup();
        let lim = ContactLimits {
            friction: FrictionRows::AsPrinted,
            ..limits(&params)
        };
        let prob = build_force_qp(&Vector6::zeros(), &m, &g, &ContactPattern::STAND, &QpWeights::default(), &lim).unwrap();
        // Row 0 is f_z ≥ f_z,min; rows 1-2 are the x pair of foot 0.
        assert_eq!((prob.a[(1, 2)], prob.a[(1, 0)], prob.upper[1]), (1.0, -params.friction_mu, 0.0));
        assert_eq!((prob.a[(2, 2)], prob.a[(2, 0)], prob.lower[2]), (1.0, params.friction_mu, 0.0));
        let flagged = QpWeights {
            friction_as_printed: true,
            ..QpWeights::default()
        };
        assert_eq!(flagged.friction_rows(), FrictionRows::AsPrinted);
        assert_eq!(QpWeights::default().friction_rows(), FrictionRows::Pyramid);
    }

    #[test]
    fn zero_friction_kills_tangential_forces() {
        let (params, m, g) = setup();
        let lim = ContactLimits { mu: 0.0, ..limits(&params) };
        let target = Vector6::new(0.5, -0.3, 0.0, 0.2, 0.1, 0.3);
        let prob = build_force_qp(&target, &m, &g, &ContactPattern::STAND, &QpWeights::default(), &lim).unwrap();
        let sol = QpSolver::default().solve(&prob).unwrap();
        assert!(sol.is_solved());
        for foot in 0..4 {
            assert!(sol.x[3 * foot].abs() <= 1e-8);
            assert!(sol.x[3 * foot + 1].abs() <= 1e-8);
        }
    }

    #[test]
    fn cost_matches_standard_form_plus_constant() {
        let (_, m, g) = setup();
        let target = Vector6::new(0.1, 0.2, -0.3, 0.4, 0.5, -0.6);
        let w = QpWeights::default();
        let prob = build_force_qp(&target, &m, &g, &ContactPattern::STAND, &w, &limits(&PhysicalParams::default())).unwrap();
        let f = FootForces::from_stacked(&(0..12).map(|i| 3.0 * i as f64 - 7.0).collect::<Vec<_>>());
        let x = DVector::from_iterator(12, f.stacked().iter().copied());
        let b = target - g;
        let constant: f64 = b.iter().zip(w.q_weight.iter()).map(|(v, q)| q * v * v).sum();
        let direct = force_qp_cost(&target, &m, &g, &w, &f);
        assert!((prob.objective(&x) + constant - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }
}
