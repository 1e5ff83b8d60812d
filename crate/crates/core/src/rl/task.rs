use rand::RngCore;

use super::{greedy_action, Mlp, RlError};
use crate::policy::HighLevelPolicy;
use crate::primitives::{Primitive, NUM_PRIMITIVES};
use crate::sim::{sample_training_scenario, ScenarioDistribution, TreadmillEnv};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True terminal state (no bootstrapping).
    pub terminal: bool,
    /// Episode cut off by the time limit.
    pub truncated: bool,
}

/// Episodic task with a discrete action set.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<Vec<f64>, RlError>;
    fn step(&mut self, action: usize) -> Result<EnvStep, RlError>;
}

/// The treadmill with scenarios drawn from the training distribution on
/// every reset.
#[derive(Debug, Clone)]
pub struct TreadmillTask {
    pub env: TreadmillEnv,
    pub distribution: ScenarioDistribution,
}

impl TreadmillTask {
    pub fn new(env: TreadmillEnv, distribution: ScenarioDistribution) -> Self {
        Self { env, distribution }
    }
}

impl Environment for TreadmillTask {
    fn obs_dim(&self) -> usize {
        self.env.layout().dim()
    }

    fn num_actions(&self) -> usize {
        NUM_PRIMITIVES
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<Vec<f64>, RlError> {
        let scenario = sample_training_scenario(rng, &self.distribution);
        Ok(self.env.reset(scenario)?)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, RlError> {
        let primitive = Primitive::from_id(action).ok_or(RlError::InvalidAction(action))?;
        let out = self.env.step(primitive)?;
        Ok(EnvStep {
            obs: out.obs,
            reward: out.reward,
            terminal: out.fell,
            truncated: out.done && !out.fell,
        })
    }
}

/// Greedy policy over a trained Q-network.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub net: Mlp,
}

impl LearnedPolicy {
    pub fn new(net: Mlp) -> Result<Self, RlError> {
        if net.output_dim() != NUM_PRIMITIVES {
            return Err(RlError::DimensionMismatch {
                expected: NUM_PRIMITIVES,
                got: net.output_dim(),
            });
        }
        Ok(Self { net })
    }
}

impl HighLevelPolicy for LearnedPolicy {
    fn name(&self) -> String {
        "learned".into()
    }

    fn select(&mut self, _env: &mut TreadmillEnv, obs: &[f64]) -> Primitive {
        // The constructor fixed the output size and the caller owns the
        // observation layout, so a mismatch here is a programming error.
        let q = self.net.forward(obs).expect("observation matches the network input");
        Primitive::from_id(greedy_action(&q)).expect("network has one head per primitive")
    }
}
