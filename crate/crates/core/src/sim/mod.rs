//! Split-belt treadmill simulator.
//!
//! The base is a single rigid body driven by the ground reaction forces the
//! low-level controller asks for, clamped to each foot's Coulomb cone. Legs
//! are massless: stance feet ride on their belt (or the fixed bridge), swing
//! feet follow their targets as critically damped particles.

mod env;
mod physics;

pub use env::{
    energy_metric, ContactRecord, EnergyMetric, EpisodeStats, ObservationLayout, StepOutcome, TreadmillEnv,
    Transition, OBS_LAYOUT_VERSION,
};
pub use physics::{physics_tick, Contact, ContactState, SimState, Surface, TickInput};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlError;
use crate::model::NUM_FEET;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step_high_level called after the episode finished")]
    StepAfterDone,
    #[error("episode lasted {seconds:.3} s without falling; the energy window needs {required:.3} s")]
    EpisodeTooShort { seconds: f64, required: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid action id {0}")]
    InvalidAction(usize),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Simulator and episode constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Physics and control period, s.
    pub dt: f64,
    /// Low-level ticks per high-level decision.
    pub ticks_per_step: usize,
    pub episode_seconds: f64,
    pub body_height: f64,
    pub fall_roll: f64,
    pub fall_pitch: f64,
    pub fall_height: f64,
    /// Coulomb coefficient of the belts and the bridge.
    pub ground_mu: f64,
    /// Viscous coefficient turning untransmitted tangential force into slip
    /// velocity, N·s/m.
    pub slip_damping: f64,
    /// Natural frequency of the swing-foot particle, rad/s.
    pub swing_omega: f64,
    /// A descending foot touches down below this height, m.
    pub touchdown_height: f64,
    /// How far below the surface a stance-commanded foot in flight aims, m.
    pub touchdown_depth: f64,
    /// Swing feet may land only after this fraction of the primitive.
    pub touchdown_phase: f64,
    pub torque_penalty: f64,
    pub observe_twist: bool,
    /// Half-width of the uniform start-position offset applied by seeded
    /// resets, m.
    pub initial_jitter_position: f64,
    /// Half-width of the uniform start roll/pitch/yaw offset of seeded
    /// resets, rad.
    pub initial_jitter_angle: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            ticks_per_step: 200,
            episode_seconds: 10.0,
            body_height: 0.40,
            fall_roll: 0.5,
            fall_pitch: 0.5,
            fall_height: 0.15,
            ground_mu: 0.9,
            slip_damping: 5.0,
            swing_omega: 25.0,
            touchdown_height: 0.005,
            touchdown_depth: 0.02,
            touchdown_phase: 0.5,
            torque_penalty: 0.0025,
            observe_twist: false,
            initial_jitter_position: 0.005,
            initial_jitter_angle: 0.02,
        }
    }
}

impl SimConfig {
    pub fn step_seconds(&self) -> f64 {
        self.dt * self.ticks_per_step as f64
    }

    /// High-level decisions per full episode.
    pub fn steps_per_episode(&self) -> usize {
        (self.episode_seconds / self.step_seconds() - 1e-9).ceil() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("dt", self.dt),
            ("episode_seconds", self.episode_seconds),
            ("body_height", self.body_height),
            ("slip_damping", self.slip_damping),
            ("swing_omega", self.swing_omega),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("sim.{name} must be positive, got {v}"));
            }
        }
        if self.ticks_per_step == 0 {
            return Err("sim.ticks_per_step must be at least 1".into());
        }
        let non_negative = [
            ("ground_mu", self.ground_mu),
            ("torque_penalty", self.torque_penalty),
            ("initial_jitter_position", self.initial_jitter_position),
            ("initial_jitter_angle", self.initial_jitter_angle),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("sim.{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Foot with a friction override (the "banana peel").
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipPatch {
    pub foot: usize,
    pub friction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Belt surface speeds, m/s; positive carries the feet toward −x.
    pub belt_speed_left: f64,
    pub belt_speed_right: f64,
    pub left_active: bool,
    pub right_active: bool,
    pub commanded_yaw: f64,
    /// Front feet stand on a fixed surface covering `x ≥ 0`.
    pub bridge: bool,
    pub slip: Option<SlipPatch>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::still()
    }
}

pub const MAX_BELT_SPEED: f64 = 0.5;

impl Scenario {
    pub fn still() -> Self {
        Self {
            belt_speed_left: 0.0,
            belt_speed_right: 0.0,
            left_active: true,
            right_active: true,
            commanded_yaw: 0.0,
            bridge: false,
            slip: None,
        }
    }

    /// Both belts at `speed`.
    pub fn uniform(speed: f64) -> Self {
        Self {
            belt_speed_left: speed,
            belt_speed_right: speed,
            ..Self::still()
        }
    }

    /// One belt at `speed`, the other paused, robot facing `yaw`.
    pub fn one_belt(speed: f64, left_moving: bool, yaw: f64) -> Self {
        Self {
            belt_speed_left: speed,
            belt_speed_right: speed,
            left_active: left_moving,
            right_active: !left_moving,
            commanded_yaw: yaw,
            ..Self::still()
        }
    }

    pub fn bridge(speed: f64) -> Self {
        Self {
            bridge: true,
            ..Self::uniform(speed)
        }
    }

    pub fn banana_peel(foot: usize, friction: f64) -> Self {
        Self {
            slip: Some(SlipPatch { foot, friction }),
            ..Self::still()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        for v in [self.belt_speed_left, self.belt_speed_right] {
            if !v.is_finite() || v.abs() > MAX_BELT_SPEED {
                return bad(format!("belt speed {v} outside ±{MAX_BELT_SPEED} m/s"));
            }
        }
        if !self.commanded_yaw.is_finite() {
            return bad("commanded yaw is not finite".into());
        }
        if let Some(s) = self.slip {
            if s.foot >= NUM_FEET {
                return bad(format!("slip foot {} out of range", s.foot));
            }
            if !(s.friction >= 0.0) {
                return bad(format!("friction override {} is negative", s.friction));
            }
        }
        Ok(())
    }

    /// Effective surface speed of each belt after the pause flags.
    pub fn left_speed(&self) -> f64 {
        if self.left_active {
            self.belt_speed_left
        } else {
            0.0
        }
    }

    pub fn right_speed(&self) -> f64 {
        if self.right_active {
            self.belt_speed_right
        } else {
            0.0
        }
    }

    /// Short stable descriptor used in reports.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "left={}{} right={}{} yaw_deg={}",
            self.belt_speed_left,
            if self.left_active { "" } else { "(paused)" },
            self.belt_speed_right,
            if self.right_active { "" } else { "(paused)" },
            self.commanded_yaw.to_degrees().round()
        );
        if self.bridge {
            s.push_str(" bridge");
        }
        if let Some(p) = self.slip {
            s.push_str(&format!(" slip_foot={} mu={}", p.foot, p.friction));
        }
        s
    }
}

/// Parameters of the training scenario sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioDistribution {
    pub max_speed: f64,
    pub pause_probability: f64,
    /// Commanded yaws are drawn from `yaw_count` evenly spaced headings.
    pub yaw_count: usize,
}

impl Default for ScenarioDistribution {
    fn default() -> Self {
        Self {
            max_speed: 0.3,
            pause_probability: 1.0 / 3.0,
            yaw_count: 12,
        }
    }
}

impl ScenarioDistribution {
    /// Headings `k · 360°/yaw_count` wrapped into (−π, π].
    pub fn yaw_grid(&self) -> Vec<f64> {
        let n = self.yaw_count.max(1);
        (0..n)
            .map(|k| crate::model::wrap_angle(2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=MAX_BELT_SPEED).contains(&self.max_speed) {
            return Err(format!("scenarios.max_speed must be in [0, {MAX_BELT_SPEED}]"));
        }
        if !(0.0..=1.0).contains(&self.pause_probability) {
            return Err("scenarios.pause_probability must be in [0, 1]".into());
        }
        if self.yaw_count == 0 {
            return Err("scenarios.yaw_count must be at least 1".into());
        }
        Ok(())
    }
}

pub fn sample_training_scenario<R: Rng + ?Sized>(rng: &mut R, dist: &ScenarioDistribution) -> Scenario {
    let speed = |rng: &mut R| {
        if dist.max_speed > 0.0 {
            rng.random_range(-dist.max_speed..=dist.max_speed)
        } else {
            0.0
        }
    };
    let belt_speed_left = speed(rng);
    let belt_speed_right = speed(rng);
    let (mut left_active, mut right_active) = (true, true);
    if rng.random_bool(dist.pause_probability) {
        if rng.random_bool(0.5) {
            left_active = false;
        } else {
            right_active = false;
        }
    }
    let grid = dist.yaw_grid();
    let commanded_yaw = grid[rng.random_range(0..grid.len())];
    Scenario {
        belt_speed_left,
        belt_speed_right,
        left_active,
        right_active,
        commanded_yaw,
        bridge: false,
        slip: None,
    }
}
