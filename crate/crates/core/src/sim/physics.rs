use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Scenario, SimConfig};
use crate::kinematics::{inverse_kinematics, max_reach, JointState};
use crate::model::{
    angular_velocity_to_euler_rates, nonlinear_centroidal, wrap_angle, FootForces, ModelError, PhysicalParams,
    RobotState, NUM_FEET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    LeftBelt,
    RightBelt,
    Fixed,
}

impl Surface {
    /// Surface under a world point.
    pub fn at(point: &Vector3<f64>, scenario: &Scenario) -> Self {
        if scenario.bridge && point.x >= 0.0 {
            Surface::Fixed
        } else if point.y >= 0.0 {
            Surface::LeftBelt
        } else {
            Surface::RightBelt
        }
    }

    pub fn velocity(self, scenario: &Scenario) -> Vector3<f64> {
        match self {
            Surface::LeftBelt => Vector3::new(-scenario.left_speed(), 0.0, 0.0),
            Surface::RightBelt => Vector3::new(-scenario.right_speed(), 0.0, 0.0),
            Surface::Fixed => Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactState {
    Attached(Surface),
    /// In the air, tracking its target.
    Flight,
    /// Dragged past full leg extension; hangs until the leg is swung again.
    Detached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub state: ContactState,
    /// World position of an attached foot (z = 0); last contact point otherwise.
    pub anchor: Vector3<f64>,
    /// Foot velocity relative to the base, world-aligned axes.
    pub velocity: Vector3<f64>,
    pub slipping: bool,
    /// Previous tick's swing target, for the velocity feedforward.
    pub last_target: Option<Vector3<f64>>,
}

impl Contact {
    pub fn attached_to(&self) -> Option<Surface> {
        match self.state {
            ContactState::Attached(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_attached(&self) -> bool {
        self.attached_to().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub robot: RobotState,
    pub joints: JointState,
    pub contacts: [Contact; NUM_FEET],
    /// Forces the ground actually applied during the last tick.
    pub ground_forces: FootForces,
    pub time: f64,
    pub tick: u64,
}

impl SimState {
    /// Robot standing still at `height`, facing `yaw`, feet on their
    /// nominal spots.
    pub fn at_rest(height: f64, yaw: f64, scenario: &Scenario, params: &PhysicalParams) -> Self {
        let base = Vector3::new(0.0, 0.0, height);
        let rz = crate::model::rot_z(yaw);
        let mut foot_positions = [Vector3::zeros(); NUM_FEET];
        let contacts = std::array::from_fn(|i| {
            let mut offset = rz * params.default_foot_positions[i];
            offset.z = -height;
            foot_positions[i] = offset;
            let anchor = base + offset;
            Contact {
                state: ContactState::Attached(Surface::at(&anchor, scenario)),
                anchor,
                velocity: Surface::at(&anchor, scenario).velocity(scenario),
                slipping: false,
                last_target: None,
            }
        });
        let robot = RobotState {
            pose: crate::model::BodyPose::new(base, Vector3::new(0.0, 0.0, yaw)),
            twist: nalgebra::Vector6::zeros(),
            foot_positions,
        };
        let mut state = Self {
            robot,
            joints: JointState::default(),
            contacts,
            ground_forces: FootForces::zero(),
            time: 0.0,
            tick: 0,
        };
        update_joints(&mut state, params);
        state
    }

    /// Moves the base by `offset` and tilts it by `rpy` while attached feet
    /// stay on their anchors.
    pub fn perturb(&mut self, offset: &Vector3<f64>, rpy: &Vector3<f64>, params: &PhysicalParams) {
        self.robot.pose.position += offset;
        self.robot.pose.orientation += rpy;
        self.robot.pose.orientation.z = wrap_angle(self.robot.pose.orientation.z);
        let base = self.robot.pose.position;
        for (c, p) in self.contacts.iter().zip(self.robot.foot_positions.iter_mut()) {
            if c.is_attached() {
                *p = c.anchor - base;
            }
        }
        update_joints(self, params);
    }

    pub fn attached(&self) -> [bool; NUM_FEET] {
        self.contacts.map(|c| c.is_attached())
    }

    /// Starts the swing of `foot`. Attached feet keep their current relative
    /// velocity; a detached foot starts from rest.
    pub fn lift_off(&mut self, foot: usize) {
        let c = &mut self.contacts[foot];
        match c.state {
            ContactState::Attached(_) => {}
            ContactState::Detached => c.velocity = Vector3::zeros(),
            ContactState::Flight => return,
        }
        c.state = ContactState::Flight;
        c.slipping = false;
        c.last_target = None;
    }
}

/// What the controller hands the simulator each tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickInput {
    /// Requested ground reaction forces, world frame.
    pub forces: FootForces,
    /// Swing targets, offsets from the base.
    pub targets: [Vector3<f64>; NUM_FEET],
    /// Stance flags of the primitive being executed.
    pub stance: [bool; NUM_FEET],
    /// Progress through the primitive, `[0, 1]`.
    pub phase: f64,
}

fn friction_for(foot: usize, scenario: &Scenario, cfg: &SimConfig) -> f64 {
    match scenario.slip {
        Some(p) if p.foot == foot => p.friction,
        _ => cfg.ground_mu,
    }
}

/// Clamps a requested ground force to the cone `‖f_t‖ ≤ μ f_z`, returning
/// the transmitted force and the untransmitted tangential part.
pub(crate) fn clamp_to_cone(f: &Vector3<f64>, mu: f64) -> (Vector3<f64>, Vector3<f64>) {
    let fz = f.z.max(0.0);
    let tangential = Vector3::new(f.x, f.y, 0.0);
    let t = tangential.norm();
    let limit = mu * fz;
    if t <= limit {
        return (Vector3::new(f.x, f.y, fz), Vector3::zeros());
    }
    let kept = if t > 0.0 { tangential * (limit / t) } else { Vector3::zeros() };
    (Vector3::new(kept.x, kept.y, fz), tangential - kept)
}

fn update_joints(state: &mut SimState, params: &PhysicalParams) {
    for leg in 0..NUM_FEET {
        if let Ok(ik) = inverse_kinematics(leg, &state.robot.foot_in_body(leg), params) {
            state.joints.set_leg(leg, &ik.angles);
        }
    }
}

/// Advances the simulation by one tick.
pub fn physics_tick(
    sim: &SimState,
    input: &TickInput,
    scenario: &Scenario,
    cfg: &SimConfig,
    params: &PhysicalParams,
) -> Result<SimState, ModelError> {
    let dt = cfg.dt;
    let mut next = *sim;

    let mut transmitted = FootForces::zero();
    let mut slip_velocity = [Vector3::zeros(); NUM_FEET];
    for i in 0..NUM_FEET {
        next.contacts[i].slipping = false;
        if !(sim.contacts[i].is_attached() && input.stance[i]) {
            continue;
        }
        let (kept, deficit) = clamp_to_cone(&input.forces.forces[i], friction_for(i, scenario, cfg));
        transmitted.forces[i] = kept;
        if deficit.norm() > 0.0 {
            next.contacts[i].slipping = true;
            // The leg pushes with −f; whatever the ground cannot hold moves the foot.
            slip_velocity[i] = -deficit / cfg.slip_damping;
        }
    }
    next.ground_forces = transmitted;

    let acc = nonlinear_centroidal(&sim.robot, &transmitted, params)?;
    let robot = &mut next.robot;
    for k in 0..6 {
        robot.twist[k] += acc[k] * dt;
    }
    let v = robot.linear_velocity();
    let omega = robot.angular_velocity();
    robot.pose.position += v * dt;
    let rates = angular_velocity_to_euler_rates(sim.robot.pose.yaw(), &omega);
    robot.pose.orientation += rates * dt;
    robot.pose.orientation.z = wrap_angle(robot.pose.orientation.z);

    let base = robot.pose.position;
    let rot = robot.pose.rotation();
    let old_rot = sim.robot.pose.rotation();
    let reach = max_reach(params);
    let omega_n = cfg.swing_omega;

    for i in 0..NUM_FEET {
        let contact = &mut next.contacts[i];
        let mut offset = sim.robot.foot_positions[i];
        match contact.state {
            ContactState::Attached(surface) => {
                contact.anchor += (surface.velocity(scenario) + slip_velocity[i]) * dt;
                contact.anchor.z = 0.0;
                offset = contact.anchor - base;
                contact.velocity = surface.velocity(scenario) + slip_velocity[i] - v;
            }
            ContactState::Flight => {
                let mut target = input.targets[i];
                if input.stance[i] {
                    target.z = -base.z - cfg.touchdown_depth;
                }
                // Critically damped tracking error, with the target's own
                // velocity fed forward so the foot does not lag the swing arc.
                let target_vel = contact.last_target.map_or(Vector3::zeros(), |prev| (target - prev) / dt);
                contact.last_target = Some(target);
                let accel = (target - offset) * (omega_n * omega_n) + (target_vel - contact.velocity) * (2.0 * omega_n);
                contact.velocity += accel * dt;
                offset += contact.velocity * dt;
                let world = base + offset;
                let may_land = input.stance[i] || input.phase >= cfg.touchdown_phase;
                if may_land && world.z <= cfg.touchdown_height {
                    let anchor = Vector3::new(world.x, world.y, 0.0);
                    let surface = Surface::at(&anchor, scenario);
                    contact.state = ContactState::Attached(surface);
                    contact.anchor = anchor;
                    contact.velocity = surface.velocity(scenario) - v;
                    offset = anchor - base;
                }
            }
            ContactState::Detached => {
                offset = rot * (old_rot.transpose() * offset);
                contact.velocity = Vector3::zeros();
            }
        }

        // Full extension: the leg cannot follow the foot any further.
        let hip = params.hip_offsets[i];
        let in_body = rot.transpose() * offset;
        let from_hip = in_body - hip;
        let dist = from_hip.norm();
        if dist > reach {
            let clamped = hip + from_hip * (reach / dist);
            offset = rot * clamped;
            if contact.is_attached() {
                contact.state = ContactState::Detached;
                contact.slipping = false;
                contact.velocity = Vector3::zeros();
            }
        }
        robot.foot_positions[i] = offset;
    }

    update_joints(&mut next, params);
    next.time = sim.time + dt;
    next.tick = sim.tick + 1;
    Ok(next)
}
