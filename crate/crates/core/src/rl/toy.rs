use rand::{Rng, RngCore};

use super::{EnvStep, Environment, RlError};

/// Deterministic two-state, two-action chain used to validate the learner.
///
/// Action 0 stays, action 1 switches state. `rewards[s][a]` is paid on the
/// transition; episodes are cut off (not terminated) after `horizon` steps
/// and restart in a uniformly drawn state.
#[derive(Debug, Clone)]
pub struct ToyMdp {
    pub rewards: [[f64; 2]; 2],
    pub horizon: usize,
    state: usize,
    t: usize,
}

impl ToyMdp {
    pub fn new(rewards: [[f64; 2]; 2], horizon: usize) -> Self {
        Self {
            rewards,
            horizon,
            state: 0,
            t: 0,
        }
    }

    pub fn next_state(state: usize, action: usize) -> usize {
        if action == 0 {
            state
        } else {
            1 - state
        }
    }

    pub fn encode(state: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2];
        v[state] = 1.0;
        v
    }
}

impl Environment for ToyMdp {
    fn obs_dim(&self) -> usize {
        2
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Result<Vec<f64>, RlError> {
        self.state = rng.random_range(0..2);
        self.t = 0;
        Ok(Self::encode(self.state))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, RlError> {
        if action > 1 {
            return Err(RlError::InvalidAction(action));
        }
        let reward = self.rewards[self.state][action];
        self.state = Self::next_state(self.state, action);
        self.t += 1;
        Ok(EnvStep {
            obs: Self::encode(self.state),
            reward,
            terminal: false,
            truncated: self.t >= self.horizon,
        })
    }
}
