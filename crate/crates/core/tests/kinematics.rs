use hiergait::kinematics::*;
use hiergait::model::{FootForces, PhysicalParams};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

/// Joint angles inside the limits whose foot hangs below the hip-roll axis,
/// the branch the IK commits to.
fn hanging_leg() -> impl Strategy<Value = (usize, Vector3<f64>)> {
    (0usize..4, -0.8f64..0.8, -1.2f64..1.2, 0.1f64..2.7).prop_filter_map("foot above hip", |(leg, r, p, k)| {
        let l = PhysicalParams::default().link_lengths;
        let planar_z = -l.thigh * p.cos() - l.shank * (p + k).cos();
        (planar_z < -0.05).then_some((leg, Vector3::new(r, p, k)))
    })
}

fn fd_jacobian(leg: usize, q: &Vector3<f64>, params: &PhysicalParams, h: f64) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for c in 0..3 {
        let mut plus = *q;
        let mut minus = *q;
        plus[c] += h;
        minus[c] -= h;
        let col = (forward_kinematics(leg, &plus, params) - forward_kinematics(leg, &minus, params)) / (2.0 * h);
        j.set_column(c, &col);
    }
    j
}

#[test]
fn full_extension_is_singular() {
    let params = PhysicalParams::default();
    for leg in 0..4 {
        let j = jacobian(leg, &Vector3::new(0.1, 0.3, 0.0), &params);
        assert!(j.determinant().abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn ik_fk_round_trip((leg, q) in hanging_leg()) {
        let params = PhysicalParams::default();
        let p = forward_kinematics(leg, &q, &params);
        let ik = inverse_kinematics(leg, &p, &params).unwrap();
        prop_assert!((forward_kinematics(leg, &ik.angles, &params) - p).amax() < 1e-9);
        prop_assert!((ik.angles - q).amax() < 1e-7, "recovered {:?} from {:?}", ik.angles, q);
    }

    #[test]
    fn foot_stays_within_reach((leg, q) in hanging_leg()) {
        let params = PhysicalParams::default();
        let p = forward_kinematics(leg, &q, &params);
        prop_assert!((p - params.hip_offsets[leg]).norm() <= max_reach(&params) + 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences((leg, q) in hanging_leg()) {
        let params = PhysicalParams::default();
        let j = jacobian(leg, &q, &params);
        let fd = fd_jacobian(leg, &q, &params, 1e-7);
        prop_assert!((j - fd).amax() <= 1e-6);
        for c in 0..3 {
            prop_assert!(j.column(c).norm() <= max_reach(&params) + 1e-12);
        }
    }

    #[test]
    fn virtual_work_balances(
        (leg, q) in hanging_leg(),
        f in prop::array::uniform3(-100.0f64..100.0),
        qd in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let params = PhysicalParams::default();
        let mut joints = JointState::default();
        joints.set_leg(leg, &q);
        let mut forces = FootForces::zero();
        forces.forces[leg] = Vector3::from(f);
        let tau = torques_from_forces(&joints, &forces, &params);
        let qd = Vector3::from(qd);
        let foot_velocity = jacobian(leg, &q, &params) * qd;
        let joint_power = tau.torques.fixed_rows::<3>(3 * leg).dot(&qd);
        prop_assert!((joint_power - Vector3::from(f).dot(&foot_velocity)).abs() < 1e-9);
        for other in (0..4).filter(|&o| o != leg) {
            prop_assert!(tau.torques.fixed_rows::<3>(3 * other).amax() == 0.0);
        }
    }
}
