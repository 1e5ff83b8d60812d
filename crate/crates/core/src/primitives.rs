//! Contact primitives, fixed-gait baselines and the QP-cost heuristic selector.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::controller::{BodyCommand, LowLevelController, TickContext};
use crate::kinematics::JointState;
use crate::model::{RobotState, NUM_FEET};

/// Per-foot swing flags (`true` = swing), LF, RF, LR, RR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContactPattern {
    pub swing: [bool; NUM_FEET],
}

impl ContactPattern {
    pub const STAND: Self = Self { swing: [false; NUM_FEET] };

    pub fn from_bits(bits: [u8; NUM_FEET]) -> Self {
        Self {
            swing: bits.map(|b| b != 0),
        }
    }

    pub fn bits(&self) -> [u8; NUM_FEET] {
        self.swing.map(u8::from)
    }

    pub fn is_stance(&self, foot: usize) -> bool {
        !self.swing[foot]
    }

    pub fn stance_count(&self) -> usize {
        self.swing.iter().filter(|s| !**s).count()
    }

    /// Index 0..16 with LF as the most significant bit.
    pub fn index(&self) -> usize {
        self.swing.iter().fold(0, |acc, &s| (acc << 1) | usize::from(s))
    }
}

impl fmt::Display for ContactPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.bits();
        write!(f, "[{} {} {} {}]", b[0], b[1], b[2], b[3])
    }
}

/// The nine primitives used by every high-level controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Primitive {
    Stand = 0,
    Trot1 = 1,
    Trot2 = 2,
    Pace1 = 3,
    Pace2 = 4,
    Step1 = 5,
    Step2 = 6,
    Step3 = 7,
    Step4 = 8,
}

pub const NUM_PRIMITIVES: usize = 9;

impl Primitive {
    pub const ALL: [Primitive; NUM_PRIMITIVES] = [
        Primitive::Stand,
        Primitive::Trot1,
        Primitive::Trot2,
        Primitive::Pace1,
        Primitive::Pace2,
        Primitive::Step1,
        Primitive::Step2,
        Primitive::Step3,
        Primitive::Step4,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn pattern(self) -> ContactPattern {
        let bits = match self {
            Primitive::Stand => [0, 0, 0, 0],
            Primitive::Trot1 => [1, 0, 0, 1],
            Primitive::Trot2 => [0, 1, 1, 0],
            Primitive::Pace1 => [0, 1, 0, 1],
            Primitive::Pace2 => [1, 0, 1, 0],
            Primitive::Step1 => [1, 0, 0, 0],
            Primitive::Step2 => [0, 1, 0, 0],
            Primitive::Step3 => [0, 0, 1, 0],
            Primitive::Step4 => [0, 0, 0, 1],
        };
        ContactPattern::from_bits(bits)
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Stand => "Stand",
            Primitive::Trot1 => "Trot1",
            Primitive::Trot2 => "Trot2",
            Primitive::Pace1 => "Pace1",
            Primitive::Pace2 => "Pace2",
            Primitive::Step1 => "Step1",
            Primitive::Step2 => "Step2",
            Primitive::Step3 => "Step3",
            Primitive::Step4 => "Step4",
        }
    }

    pub fn from_pattern(pattern: &ContactPattern) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.pattern() == *pattern)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn primitive_table() -> [Primitive; NUM_PRIMITIVES] {
    Primitive::ALL
}

/// Cyclic primitive sequence for the fixed-gait baselines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaitSchedule {
    sequence: Vec<Primitive>,
    phase: usize,
}

impl GaitSchedule {
    pub fn new(sequence: Vec<Primitive>) -> Option<Self> {
        (!sequence.is_empty()).then_some(Self { sequence, phase: 0 })
    }

    pub fn standing() -> Self {
        Self::new(vec![Primitive::Stand]).unwrap()
    }

    pub fn trotting() -> Self {
        Self::new(vec![Primitive::Trot1, Primitive::Trot2]).unwrap()
    }

    pub fn pacing() -> Self {
        Self::new(vec![Primitive::Pace1, Primitive::Pace2]).unwrap()
    }

    pub fn walking() -> Self {
        Self::new(vec![Primitive::Step1, Primitive::Step4, Primitive::Step2, Primitive::Step3]).unwrap()
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn sequence(&self) -> &[Primitive] {
        &self.sequence
    }

    pub fn reset(&mut self) {
        self.phase = 0;
    }
}

/// Returns the primitive at the current phase and advances cyclically.
pub fn fixed_gait_next(schedule: &mut GaitSchedule) -> Primitive {
    let p = schedule.sequence[schedule.phase];
    schedule.phase = (schedule.phase + 1) % schedule.sequence.len();
    p
}

/// Whether the heuristic executes the smallest or the largest `Q̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Min,
    Max,
}

/// `Q̂ = J_QP + k_q Σⱼ eⱼ`.
pub fn heuristic_q(qp_cost: f64, foot_errors: &[f64; NUM_FEET], k_q: f64) -> f64 {
    qp_cost + k_q * foot_errors.iter().sum::<f64>()
}

/// Picks the extremum per `mode`; ties go to the lowest id.
pub fn select_by_mode(scores: &[f64; NUM_PRIMITIVES], mode: SelectionMode) -> Primitive {
    let mut best = 0;
    for i in 1..NUM_PRIMITIVES {
        let better = match mode {
            SelectionMode::Min => scores[i] < scores[best],
            SelectionMode::Max => scores[i] > scores[best],
        };
        if better {
            best = i;
        }
    }
    Primitive::ALL[best]
}

/// Scores every primitive with [`heuristic_q`] and picks one.
///
/// The foot error of primitive `i` is the error the robot would be left with
/// after executing it: swing feet reach their placement targets, stance feet
/// keep their current offset from the target.
pub fn heuristic_scores(
    controller: &mut LowLevelController,
    state: &RobotState,
    command: &BodyCommand,
    ground_velocity: &Vector3<f64>,
    k_q: f64,
) -> [f64; NUM_PRIMITIVES] {
    let ctx = TickContext {
        ground_velocity: *ground_velocity,
        ..TickContext::touchdown()
    };
    let targets = controller.swing_targets(state, command, &ctx).targets;
    let current: [f64; NUM_FEET] = std::array::from_fn(|j| (targets[j] - state.foot_positions[j]).norm());
    let mut scores = [0.0; NUM_PRIMITIVES];
    for prim in Primitive::ALL {
        let pattern = prim.pattern();
        let cost = controller.evaluate_qp_cost(state, command, &pattern);
        let errors: [f64; NUM_FEET] = std::array::from_fn(|j| if pattern.swing[j] { 0.0 } else { current[j] });
        scores[prim.id()] = heuristic_q(cost, &errors, k_q);
    }
    scores
}

pub fn heuristic_select(
    controller: &mut LowLevelController,
    state: &RobotState,
    _joints: &JointState,
    command: &BodyCommand,
    ground_velocity: &Vector3<f64>,
    k_q: f64,
    mode: SelectionMode,
) -> Primitive {
    select_by_mode(&heuristic_scores(controller, state, command, ground_velocity, k_q), mode)
}
