use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::physics::{physics_tick, SimState, TickInput};
use super::{Scenario, SimConfig, SimError};
use crate::controller::{BodyCommand, GainSet, LowLevelController, TickContext};
use crate::model::{wrap_angle, PhysicalParams, NUM_FEET};
use crate::primitives::{heuristic_scores, ContactPattern, Primitive, NUM_PRIMITIVES};
use crate::qp::{QpSettings, QpWeights};

/// Bumped whenever the observation layout or its scaling changes.
pub const OBS_LAYOUT_VERSION: u32 = 1;

const HEIGHT_SCALE: f64 = 0.05;
const TILT_SCALE: f64 = 0.25;
const LINEAR_VEL_SCALE: f64 = 0.5;
const ANGULAR_VEL_SCALE: f64 = 1.0;
const FOOT_SCALE: f64 = 0.1;

/// `[z, roll, pitch, yaw error, (twist), feet (12), previous action (9)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub version: u32,
    pub twist: bool,
}

impl ObservationLayout {
    pub fn new(twist: bool) -> Self {
        Self {
            version: OBS_LAYOUT_VERSION,
            twist,
        }
    }

    pub fn dim(&self) -> usize {
        4 + if self.twist { 6 } else { 0 } + 3 * NUM_FEET + NUM_PRIMITIVES
    }

    /// Index of the first one-hot entry.
    pub fn action_offset(&self) -> usize {
        self.dim() - NUM_PRIMITIVES
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// Set only when the episode ended in a fall; time-limit cut-offs are
    /// not terminal.
    pub done: bool,
    pub next_obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Episode over, by fall or time limit.
    pub done: bool,
    pub fell: bool,
}

/// One line of the per-tick contact log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub tick: u64,
    pub time_s: f64,
    /// Stance flags of the executed primitive.
    pub contacts: [bool; NUM_FEET],
    /// Whether each foot was physically on a surface after the tick.
    pub attached: [bool; NUM_FEET],
    pub primitive_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub total_reward: f64,
    pub sum_sq_torque: f64,
    pub ticks: u64,
    pub mean_sq_torque: f64,
    pub fell: bool,
    pub steps: usize,
    pub time_s: f64,
    pub primitive_histogram: [u64; NUM_PRIMITIVES],
    /// Commanded stance flags per tick.
    pub contact_log: Vec<[bool; NUM_FEET]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMetric {
    Completed(f64),
    Fell,
}

impl EnergyMetric {
    pub fn value(&self) -> Option<f64> {
        match self {
            EnergyMetric::Completed(v) => Some(*v),
            EnergyMetric::Fell => None,
        }
    }
}

/// Mean squared joint-torque norm over the episode.
pub fn energy_metric(stats: &EpisodeStats, episode_seconds: f64) -> Result<EnergyMetric, SimError> {
    if stats.fell {
        return Ok(EnergyMetric::Fell);
    }
    if stats.time_s + 1e-9 < episode_seconds || stats.ticks == 0 {
        return Err(SimError::EpisodeTooShort {
            seconds: stats.time_s,
            required: episode_seconds,
        });
    }
    Ok(EnergyMetric::Completed(stats.sum_sq_torque / stats.ticks as f64))
}

/// Treadmill environment: one scenario at a time, stepped one primitive per
/// call.
#[derive(Debug, Clone)]
pub struct TreadmillEnv {
    pub cfg: SimConfig,
    pub params: PhysicalParams,
    controller: LowLevelController,
    scenario: Scenario,
    state: SimState,
    prev_action: Primitive,
    done: bool,
    stats: EpisodeStats,
    record: bool,
    records: Vec<ContactRecord>,
}

impl TreadmillEnv {
    pub fn new(params: PhysicalParams, gains: GainSet, weights: QpWeights, qp: QpSettings, cfg: SimConfig) -> Self {
        let scenario = Scenario::still();
        let state = SimState::at_rest(cfg.body_height, 0.0, &scenario, &params);
        Self {
            controller: LowLevelController::new(params.clone(), gains, weights, qp),
            params,
            cfg,
            scenario,
            state,
            prev_action: Primitive::Stand,
            done: false,
            stats: EpisodeStats::default(),
            record: false,
            records: Vec::new(),
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(
            PhysicalParams::default(),
            GainSet::default(),
            QpWeights::default(),
            QpSettings::default(),
            SimConfig::default(),
        )
    }

    /// Keep full per-tick contact records (for export) from the next reset.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn layout(&self) -> ObservationLayout {
        ObservationLayout::new(self.cfg.observe_twist)
    }

    pub fn reset(&mut self, scenario: Scenario) -> Result<Vec<f64>, SimError> {
        scenario.validate()?;
        self.scenario = scenario;
        self.state = SimState::at_rest(self.cfg.body_height, wrap_angle(scenario.commanded_yaw), &scenario, &self.params);
        self.prev_action = Primitive::Stand;
        self.done = false;
        self.stats = EpisodeStats::default();
        self.records.clear();
        self.controller.clear_warm_start();
        Ok(self.observe())
    }

    /// Like [`reset`](Self::reset), then offsets the start pose by a small
    /// uniform draw from `seed` (see `SimConfig::initial_jitter_*`).
    pub fn reset_seeded(&mut self, scenario: Scenario, seed: u64) -> Result<Vec<f64>, SimError> {
        self.reset(scenario)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dp, da) = (self.cfg.initial_jitter_position, self.cfg.initial_jitter_angle);
        let mut draw = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
        let offset = Vector3::new(draw(dp), draw(dp), draw(dp));
        let rpy = Vector3::new(draw(da), draw(da), draw(da));
        self.state.perturb(&offset, &rpy, &self.params);
        Ok(self.observe())
    }

    /// Hold the origin at nominal height, facing the commanded yaw, at rest.
    pub fn command(&self) -> BodyCommand {
        BodyCommand::hold(self.cfg.body_height, wrap_angle(self.scenario.commanded_yaw))
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn stats(&self) -> &EpisodeStats {
        &self.stats
    }

    pub fn contact_records(&self) -> &[ContactRecord] {
        &self.records
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn prev_action(&self) -> Primitive {
        self.prev_action
    }

    pub fn controller_mut(&mut self) -> &mut LowLevelController {
        &mut self.controller
    }

    /// QP-cost heuristic scores of all primitives at the current state.
    pub fn heuristic_scores(&mut self, k_q: f64) -> [f64; NUM_PRIMITIVES] {
        let command = self.command();
        let ground = self.ground_velocity();
        heuristic_scores(&mut self.controller, &self.state.robot, &command, &ground, k_q)
    }

    /// Mean velocity of the surfaces the attached feet stand on; zero when
    /// nothing is attached.
    pub fn ground_velocity(&self) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        let mut n = 0;
        for c in &self.state.contacts {
            if let Some(surface) = c.attached_to() {
                sum += surface.velocity(&self.scenario);
                n += 1;
            }
        }
        if n > 0 {
            sum / n as f64
        } else {
            sum
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let layout = self.layout();
        let mut obs = Vec::with_capacity(layout.dim());
        let robot = &self.state.robot;
        let pose = &robot.pose;
        obs.push((pose.position.z - self.cfg.body_height) / HEIGHT_SCALE);
        obs.push(pose.roll() / TILT_SCALE);
        obs.push(pose.pitch() / TILT_SCALE);
        obs.push(wrap_angle(pose.yaw() - self.scenario.commanded_yaw) / std::f64::consts::PI);
        if layout.twist {
            obs.extend(robot.linear_velocity().iter().map(|v| v / LINEAR_VEL_SCALE));
            obs.extend(robot.angular_velocity().iter().map(|w| w / ANGULAR_VEL_SCALE));
        }
        for i in 0..NUM_FEET {
            let rel: Vector3<f64> = robot.foot_in_body(i) - self.params.default_foot_positions[i];
            obs.extend(rel.iter().map(|v| v / FOOT_SCALE));
        }
        let mut one_hot = [0.0; NUM_PRIMITIVES];
        one_hot[self.prev_action.id()] = 1.0;
        obs.extend_from_slice(&one_hot);
        obs
    }

    fn fallen(&self) -> bool {
        let pose = &self.state.robot.pose;
        !pose.is_finite()
            || pose.roll().abs() > self.cfg.fall_roll
            || pose.pitch().abs() > self.cfg.fall_pitch
            || pose.position.z < self.cfg.fall_height
    }

    pub fn step(&mut self, action: Primitive) -> Result<StepOutcome, SimError> {
        let command = self.command();
        self.step_high_level(action, &command)
    }

    /// Executes `action` for one primitive period under `command`.
    pub fn step_high_level(&mut self, action: Primitive, command: &BodyCommand) -> Result<StepOutcome, SimError> {
        if self.done {
            return Err(SimError::StepAfterDone);
        }
        let pattern = action.pattern();
        for i in 0..NUM_FEET {
            if pattern.swing[i] {
                self.state.lift_off(i);
            }
        }
        let stance: [bool; NUM_FEET] = std::array::from_fn(|i| pattern.is_stance(i));
        let ticks = self.cfg.ticks_per_step;
        let target_velocity = command.target_twist.fixed_rows::<3>(0).into_owned();

        let mut sum_tau = 0.0;
        let mut sum_vel = 0.0;
        let mut executed = 0u64;
        let mut fell = false;
        for t in 0..ticks {
            let phase = t as f64 / ticks as f64;
            let attached = self.state.attached();
            let effective = ContactPattern {
                swing: std::array::from_fn(|i| !(stance[i] && attached[i])),
            };
            let ctx = TickContext {
                phase,
                foot_velocities: self.state.contacts.map(|c| c.velocity),
                ground_velocity: self.ground_velocity(),
            };
            let out = self
                .controller
                .control_tick(&self.state.robot, &self.state.joints, command, &effective, &ctx)?;
            let input = TickInput {
                forces: out.foot_forces,
                targets: out.swing_targets,
                stance,
                phase,
            };
            self.state = physics_tick(&self.state, &input, &self.scenario, &self.cfg, &self.params)
                .map_err(crate::controller::ControlError::from)?;

            let tau2 = out.torques.squared_norm();
            sum_tau += tau2;
            sum_vel += (target_velocity - self.state.robot.linear_velocity()).norm_squared();
            executed += 1;
            self.stats.contact_log.push(stance);
            if self.record {
                self.records.push(ContactRecord {
                    tick: self.state.tick,
                    time_s: self.state.time,
                    contacts: stance,
                    attached: self.state.attached(),
                    primitive_id: action.id(),
                });
            }
            if self.fallen() {
                fell = true;
                break;
            }
        }

        let n = executed.max(1) as f64;
        let reward = 1.0 - self.cfg.torque_penalty * sum_tau / n - sum_vel / n;
        self.prev_action = action;
        let stats = &mut self.stats;
        stats.total_reward += reward;
        stats.sum_sq_torque += sum_tau;
        stats.ticks += executed;
        stats.mean_sq_torque = stats.sum_sq_torque / stats.ticks.max(1) as f64;
        stats.steps += 1;
        stats.time_s = self.state.time;
        stats.primitive_histogram[action.id()] += 1;
        stats.fell |= fell;
        self.done = fell || self.state.time + 1e-9 >= self.cfg.episode_seconds;
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            done: self.done,
            fell,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_dimensions() {
        assert_eq!(ObservationLayout::new(false).dim(), 25);
        assert_eq!(ObservationLayout::new(true).dim(), 31);
    }

    #[test]
    fn reset_observation() {
        let mut env = TreadmillEnv::with_defaults();
        let obs = env.reset(Scenario::one_belt(0.2, true, 1.0)).unwrap();
        assert_eq!(obs.len(), 25);
        // Robot faces the commanded yaw, feet on their nominal spots.
        assert!(obs[..16].iter().all(|v| v.abs() < 1e-9));
        assert_eq!(obs[16], 1.0);
        assert!(obs[17..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn energy_metric_cases() {
        let mut stats = EpisodeStats {
            sum_sq_torque: 5000.0 * 7.0,
            ticks: 5000,
            time_s: 10.0,
            ..Default::default()
        };
        assert_eq!(energy_metric(&stats, 10.0).unwrap(), EnergyMetric::Completed(7.0));
        stats.time_s = 4.0;
        assert!(matches!(energy_metric(&stats, 10.0), Err(SimError::EpisodeTooShort { .. })));
        stats.fell = true;
        assert_eq!(energy_metric(&stats, 10.0).unwrap(), EnergyMetric::Fell);
    }
}
