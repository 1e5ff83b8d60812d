//! High-level controllers and the episode runner shared by every experiment.

use serde::{Deserialize, Serialize};

use crate::primitives::{fixed_gait_next, select_by_mode, GaitSchedule, Primitive, SelectionMode};
use crate::sim::{EpisodeStats, Scenario, SimError, TreadmillEnv};

/// Default weight of the foot-error term in the heuristic controller.
pub const DEFAULT_K_Q: f64 = 50.0;

/// Picks one primitive per high-level step.
pub trait HighLevelPolicy {
    fn name(&self) -> String;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    fn select(&mut self, env: &mut TreadmillEnv, obs: &[f64]) -> Primitive;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedGait {
    Standing,
    Trotting,
    Pacing,
    Walking,
}

impl FixedGait {
    pub const ALL: [FixedGait; 4] = [FixedGait::Standing, FixedGait::Trotting, FixedGait::Pacing, FixedGait::Walking];

    pub fn schedule(self) -> GaitSchedule {
        match self {
            FixedGait::Standing => GaitSchedule::standing(),
            FixedGait::Trotting => GaitSchedule::trotting(),
            FixedGait::Pacing => GaitSchedule::pacing(),
            FixedGait::Walking => GaitSchedule::walking(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FixedGait::Standing => "standing",
            FixedGait::Trotting => "trotting",
            FixedGait::Pacing => "pacing",
            FixedGait::Walking => "walking",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedGaitPolicy {
    gait: FixedGait,
    schedule: GaitSchedule,
}

impl FixedGaitPolicy {
    pub fn new(gait: FixedGait) -> Self {
        Self {
            gait,
            schedule: gait.schedule(),
        }
    }
}

impl HighLevelPolicy for FixedGaitPolicy {
    fn name(&self) -> String {
        self.gait.name().into()
    }

    fn reset(&mut self) {
        self.schedule.reset();
    }

    fn select(&mut self, _env: &mut TreadmillEnv, _obs: &[f64]) -> Primitive {
        fixed_gait_next(&mut self.schedule)
    }
}

/// Evaluates every primitive's QP cost plus foot error and executes the
/// extremum.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicPolicy {
    pub k_q: f64,
    pub mode: SelectionMode,
}

impl Default for HeuristicPolicy {
    fn default() -> Self {
        Self {
            k_q: DEFAULT_K_Q,
            mode: SelectionMode::Min,
        }
    }
}

impl HighLevelPolicy for HeuristicPolicy {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn select(&mut self, env: &mut TreadmillEnv, _obs: &[f64]) -> Primitive {
        select_by_mode(&env.heuristic_scores(self.k_q), self.mode)
    }
}

/// Runs one full episode (to the time limit or a fall).
pub fn run_episode(
    env: &mut TreadmillEnv,
    policy: &mut dyn HighLevelPolicy,
    scenario: Scenario,
) -> Result<EpisodeStats, SimError> {
    policy.reset();
    let obs = env.reset(scenario)?;
    finish_episode(env, policy, obs)
}

/// [`run_episode`] from a start pose jittered by `seed`.
pub fn run_episode_seeded(
    env: &mut TreadmillEnv,
    policy: &mut dyn HighLevelPolicy,
    scenario: Scenario,
    seed: u64,
) -> Result<EpisodeStats, SimError> {
    policy.reset();
    let obs = env.reset_seeded(scenario, seed)?;
    finish_episode(env, policy, obs)
}

fn finish_episode(
    env: &mut TreadmillEnv,
    policy: &mut dyn HighLevelPolicy,
    mut obs: Vec<f64>,
) -> Result<EpisodeStats, SimError> {
    loop {
        let action = policy.select(env, &obs);
        let out = env.step(action)?;
        obs = out.obs;
        if out.done {
            break;
        }
    }
    Ok(env.stats().clone())
}
