use hiergait::controller::{BodyCommand, GainSet, LowLevelController, TickContext};
use hiergait::model::{FootForces, PhysicalParams, NUM_FEET};
use hiergait::policy::{run_episode, FixedGait, FixedGaitPolicy};
use hiergait::primitives::{ContactPattern, Primitive};
use hiergait::qp::{QpSettings, QpWeights};
use hiergait::sim::*;
use nalgebra::Vector3;
use proptest::prelude::*;

fn weight(params: &PhysicalParams) -> f64 {
    params.mass * params.gravity_magnitude()
}

/// Each foot pushes exactly a quarter of the weight straight down.
fn quarter_load(params: &PhysicalParams) -> TickInput {
    TickInput {
        forces: FootForces {
            forces: [Vector3::new(0.0, 0.0, weight(params) / 4.0); NUM_FEET],
        },
        targets: params.default_foot_positions,
        stance: [true; NUM_FEET],
        phase: 0.0,
    }
}

fn run_ticks(state: SimState, input: &TickInput, scenario: &Scenario, n: usize) -> SimState {
    let cfg = SimConfig::default();
    let params = PhysicalParams::default();
    (0..n).fold(state, |s, _| physics_tick(&s, input, scenario, &cfg, &params).unwrap())
}

#[test]
fn stand_holds_height_and_splits_weight() {
    let params = PhysicalParams::default();
    let cfg = SimConfig::default();
    let scenario = Scenario::still();
    let mut controller = LowLevelController::new(params.clone(), GainSet::default(), QpWeights::default(), QpSettings::default());
    let command = BodyCommand::hold(cfg.body_height, 0.0);
    let mut state = SimState::at_rest(cfg.body_height, 0.0, &scenario, &params);
    let ticks = (cfg.episode_seconds / cfg.dt).round() as usize;
    let mut worst: f64 = 0.0;
    for t in 0..ticks {
        let ctx = TickContext {
            phase: (t % cfg.ticks_per_step) as f64 / cfg.ticks_per_step as f64,
            ..TickContext::at_phase(0.0)
        };
        let out = controller
            .control_tick(&state.robot, &state.joints, &command, &ContactPattern::STAND, &ctx)
            .unwrap();
        let input = TickInput {
            forces: out.foot_forces,
            targets: out.swing_targets,
            stance: [true; NUM_FEET],
            phase: ctx.phase,
        };
        state = physics_tick(&state, &input, &scenario, &cfg, &params).unwrap();
        worst = worst.max((state.robot.pose.position.z - cfg.body_height).abs());
    }
    assert!(worst <= 0.005, "height drifted {worst} m");
    for f in state.ground_forces.forces {
        assert!((f.z - weight(&params) / 4.0).abs() <= 0.1 * weight(&params) / 4.0, "fz = {}", f.z);
    }
}

#[test]
fn static_equilibrium_does_not_drift() {
    let params = PhysicalParams::default();
    let scenario = Scenario::still();
    let start = SimState::at_rest(0.4, 0.3, &scenario, &params);
    let end = run_ticks(start, &quarter_load(&params), &scenario, 1000);
    assert!((end.robot.pose.position - start.robot.pose.position).norm() < 1e-3);
    assert!((end.robot.pose.orientation - start.robot.pose.orientation).amax() < 1e-3);
}

#[test]
fn belt_carries_anchors_at_belt_speed() {
    // 0.3 m/s over one 0.4 s primitive moves a stance foot 0.12 m.
    let params = PhysicalParams::default();
    let cfg = SimConfig::default();
    let scenario = Scenario::uniform(0.3);
    let mut start = SimState::at_rest(0.4, 0.0, &scenario, &params);
    // The body rides along so no leg runs out of reach.
    start.robot.twist[0] = -0.3;
    let end = run_ticks(start, &quarter_load(&params), &scenario, cfg.ticks_per_step);
    for i in 0..NUM_FEET {
        let moved = end.contacts[i].anchor - start.contacts[i].anchor;
        assert!((moved - Vector3::new(-0.12, 0.0, 0.0)).amax() <= 1e-9, "foot {i} moved {moved:?}");
        assert!(end.contacts[i].is_attached());
    }
}

#[test]
fn paused_belt_holds_its_feet() {
    let params = PhysicalParams::default();
    let scenario = Scenario::one_belt(0.3, true, 0.0);
    let start = SimState::at_rest(0.4, 0.0, &scenario, &params);
    let end = run_ticks(start, &quarter_load(&params), &scenario, 80);
    for i in 0..NUM_FEET {
        let dx = end.contacts[i].anchor.x - start.contacts[i].anchor.x;
        let left = params.default_foot_positions[i].y > 0.0;
        let expected = if left { -0.048 } else { 0.0 };
        assert!((dx - expected).abs() <= 1e-9, "foot {i}: {dx}");
    }
}

#[test]
fn excess_tangential_force_slips_on_the_cone() {
    let params = PhysicalParams::default();
    let cfg = SimConfig::default();
    let scenario = Scenario::still();
    let state = SimState::at_rest(0.4, 0.0, &scenario, &params);
    let mut input = quarter_load(&params);
    let fz = input.forces.forces[1].z;
    input.forces.forces[1] = Vector3::new(2.0 * fz, -1.5 * fz, fz);
    let next = physics_tick(&state, &input, &scenario, &cfg, &params).unwrap();
    let kept = next.ground_forces.forces[1];
    assert!((kept.xy().norm() - cfg.ground_mu * fz).abs() <= 1e-9);
    assert!((kept.x * 1.5 + kept.y * 2.0).abs() <= 1e-9, "direction preserved");
    assert!(next.contacts[1].slipping && !next.contacts[0].slipping);
    // The foot gives way against the untransmitted part of the push.
    let deficit = Vector3::new(2.0 * fz, -1.5 * fz, 0.0) - Vector3::new(kept.x, kept.y, 0.0);
    let moved = next.contacts[1].anchor - state.contacts[1].anchor;
    assert!((moved + deficit / cfg.slip_damping * cfg.dt).amax() <= 1e-12);
}

#[test]
fn peel_patch_changes_only_its_foot() {
    let params = PhysicalParams::default();
    let cfg = SimConfig::default();
    let scenario = Scenario::banana_peel(2, 0.0);
    let state = SimState::at_rest(0.4, 0.0, &scenario, &params);
    let mut input = quarter_load(&params);
    for f in &mut input.forces.forces {
        f.x = 0.3 * f.z;
    }
    let next = physics_tick(&state, &input, &scenario, &cfg, &params).unwrap();
    for i in 0..NUM_FEET {
        let expected = if i == 2 { 0.0 } else { 0.3 * next.ground_forces.forces[i].z };
        assert!((next.ground_forces.forces[i].x - expected).abs() <= 1e-12);
    }
    // The planner keeps assuming nominal friction.
    let mut env = TreadmillEnv::with_defaults();
    env.reset(scenario).unwrap();
    assert_eq!(env.controller_mut().limits().mu, params.friction_mu);
}

#[test]
fn bridge_front_feet_start_on_fixed_ground() {
    let mut env = TreadmillEnv::with_defaults();
    env.reset(Scenario::bridge(0.2)).unwrap();
    let surfaces: Vec<_> = env.state().contacts.iter().map(|c| c.attached_to()).collect();
    assert_eq!(surfaces[0], Some(Surface::Fixed));
    assert_eq!(surfaces[1], Some(Surface::Fixed));
    assert_eq!(surfaces[2], Some(Surface::LeftBelt));
    assert_eq!(surfaces[3], Some(Surface::RightBelt));
}

#[test]
fn stepping_after_done_is_an_error() {
    let mut env = TreadmillEnv::with_defaults();
    let stats = run_episode(&mut env, &mut FixedGaitPolicy::new(FixedGait::Standing), Scenario::still()).unwrap();
    assert!(!stats.fell);
    assert_eq!(stats.steps, 25);
    assert!((stats.time_s - 10.0).abs() < 1e-9);
    assert!(env.is_done());
    assert!(matches!(env.step(Primitive::Stand), Err(SimError::StepAfterDone)));
}

#[test]
fn episodes_are_deterministic() {
    let scenario = Scenario::one_belt(0.2, false, 1.0);
    let run = || {
        let mut env = TreadmillEnv::with_defaults();
        env.set_recording(true);
        let stats = run_episode(&mut env, &mut FixedGaitPolicy::new(FixedGait::Trotting), scenario).unwrap();
        (stats.total_reward.to_bits(), stats.sum_sq_torque.to_bits(), env.contact_records().to_vec(), env.state().robot.pose.position)
    };
    assert_eq!(run(), run());
}

#[test]
fn energy_metric_refuses_short_or_fallen_runs() {
    let mut env = TreadmillEnv::with_defaults();
    let stats = run_episode(&mut env, &mut FixedGaitPolicy::new(FixedGait::Standing), Scenario::uniform(0.3)).unwrap();
    assert!(stats.fell);
    assert_eq!(energy_metric(&stats, 10.0).unwrap(), EnergyMetric::Fell);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn step_invariants(
        actions in prop::collection::vec(0usize..9, 1..6),
        speed in -0.3f64..0.3,
        yaw in -3.0f64..3.0,
    ) {
        let mut env = TreadmillEnv::with_defaults();
        env.set_recording(true);
        env.reset(Scenario { belt_speed_right: -speed, ..Scenario::one_belt(speed, true, yaw) }).unwrap();
        let mut logged = 0;
        for id in actions {
            let prim = Primitive::from_id(id).unwrap();
            let out = env.step(prim).unwrap();
            prop_assert!(out.reward <= 1.0);
            prop_assert_eq!(out.obs.len(), env.layout().dim());
            let pattern = prim.pattern();
            for i in 0..NUM_FEET {
                if pattern.swing[i] {
                    prop_assert_eq!(env.state().ground_forces.forces[i], Vector3::zeros());
                }
            }
            let records = &env.contact_records()[logged..];
            prop_assert!(records.iter().all(|r| r.primitive_id == id));
            prop_assert!(records.iter().all(|r| (0..NUM_FEET).all(|i| r.contacts[i] == pattern.is_stance(i))));
            logged = env.contact_records().len();
            if out.done {
                break;
            }
        }
    }
}
