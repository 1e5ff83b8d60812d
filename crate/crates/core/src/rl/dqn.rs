use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, EnvStep, Environment, Mlp, ReplayBuffer, RlError};
use crate::sim::Transition;

/// Exploration distribution over the Q-values of the current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// `p_i ∝ exp(−ν Q_i / Q_max)`.
    Paper,
    /// `p_i ∝ exp(ν (Q_i − Q_max) / |Q_max|)`.
    Boltzmann,
}

/// Network whose argmax picks the bootstrap action `a′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgmaxNet {
    Online1,
    MinTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    /// Exploration temperature ν.
    pub nu: f64,
    pub batch_size: usize,
    /// Environment samples between update rounds.
    pub samples_per_update: usize,
    /// Gradient steps per update round.
    pub updates_per_round: usize,
    pub gamma: f64,
    /// Polyak factor of the target networks.
    pub rho: f64,
    pub learning_rate: f64,
    pub max_samples: u64,
    pub replay_capacity: usize,
    /// No updates until the buffer holds this many transitions.
    pub learning_starts: usize,
    pub hidden: Vec<usize>,
    pub exploration: Exploration,
    pub argmax_net: ArgmaxNet,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            nu: 5.0,
            batch_size: 512,
            samples_per_update: 100,
            updates_per_round: 50,
            gamma: 0.99,
            rho: 0.995,
            learning_rate: 3e-4,
            max_samples: 500_000,
            replay_capacity: 100_000,
            learning_starts: 512,
            hidden: vec![64, 64],
            exploration: Exploration::Paper,
            argmax_net: ArgmaxNet::Online1,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("dqn.gamma must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("dqn.rho must be in [0, 1)");
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("dqn.nu must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("dqn.learning_rate must be positive");
        }
        if self.batch_size == 0 || self.samples_per_update == 0 || self.replay_capacity == 0 {
            return bad("dqn.batch_size, dqn.samples_per_update and dqn.replay_capacity must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("dqn.hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Exploration probabilities. Degenerate cases (`ν = 0`, `|Q_max| ≤ 1e−9`)
/// fall back to uniform.
pub fn action_probabilities(q: &[f64], nu: f64, mode: Exploration) -> Vec<f64> {
    let n = q.len();
    let uniform = vec![1.0 / n as f64; n];
    let q_max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if nu == 0.0 || !q_max.is_finite() || q_max.abs() <= 1e-9 {
        return uniform;
    }
    let logits: Vec<f64> = match mode {
        Exploration::Paper => q.iter().map(|qi| -nu * qi / q_max).collect(),
        Exploration::Boltzmann => q.iter().map(|qi| nu * (qi - q_max) / q_max.abs()).collect(),
    };
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return uniform;
    }
    w.iter().map(|x| x / total).collect()
}

pub fn sample_action<R: Rng + ?Sized>(q: &[f64], nu: f64, mode: Exploration, rng: &mut R) -> usize {
    let p = action_probabilities(q, nu, mode);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Index of the largest Q-value; ties go to the lowest index.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// `r + (1 − d) γ min_i Q_targ,i(s′, a′)` for every transition.
pub fn td_targets(
    batch: &[&Transition],
    online1: &Mlp,
    target1: &Mlp,
    target2: &Mlp,
    gamma: f64,
    argmax_net: ArgmaxNet,
) -> Result<Vec<f64>, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let next = online1.batch_matrix(batch.iter().map(|t| t.next_obs.as_slice()))?;
    let t1 = target1.forward_batch(next.clone())?;
    let t2 = target2.forward_batch(next.clone())?;
    let (t1, t2) = (t1.q_values(), t2.q_values());
    let chooser: DMatrix<f64> = match argmax_net {
        ArgmaxNet::Online1 => online1.forward_batch(next)?.q_values().clone(),
        ArgmaxNet::MinTargets => t1.zip_map(t2, f64::min),
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(j, t)| {
            if t.done {
                return t.reward;
            }
            let col: Vec<f64> = chooser.column(j).iter().copied().collect();
            let a = greedy_action(&col);
            t.reward + gamma * t1[(a, j)].min(t2[(a, j)])
        })
        .collect())
}

/// `θ_targ ← ρ θ_targ + (1 − ρ) θ`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, rho: f64) -> Result<(), RlError> {
    target.zip_apply(online, |t, o| *t = rho * *t + (1.0 - rho) * o)
}

/// One training round: the samples collected and the updates that followed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u64,
    /// Total environment samples so far.
    pub samples: u64,
    /// Total gradient steps so far.
    pub updates: u64,
    /// Mean of the summed two-network objective over the round's steps.
    pub loss: Option<f64>,
    pub episodes: u64,
    pub falls: u64,
    /// Mean return of the episodes that ended during the round.
    pub mean_return: Option<f64>,
    /// Actions taken during the round, by id.
    pub usage: Vec<u64>,
}

/// Two online Q-networks, their targets and optimizers, and the learner's
/// random stream.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub online: [Mlp; 2],
    pub target: [Mlp; 2],
    pub adam: [Adam; 2],
    pub samples: u64,
    pub updates: u64,
    pub rounds: u64,
    pub rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(obs_dim: usize, num_actions: usize, config: DqnConfig) -> Result<Self, RlError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![obs_dim];
        sizes.extend(&config.hidden);
        sizes.push(num_actions);
        let online = [Mlp::new(&sizes, &mut rng), Mlp::new(&sizes, &mut rng)];
        let target = online.clone();
        let adam = [
            Adam::new(&online[0], config.learning_rate),
            Adam::new(&online[1], config.learning_rate),
        ];
        Ok(Self {
            config,
            online,
            target,
            adam,
            samples: 0,
            updates: 0,
            rounds: 0,
            rng,
        })
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        self.online[0].forward(obs)
    }

    /// Exploratory action from network 1's Q-values.
    pub fn act(&mut self, obs: &[f64]) -> Result<usize, RlError> {
        let q = self.q_values(obs)?;
        Ok(sample_action(&q, self.config.nu, self.config.exploration, &mut self.rng))
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<usize, RlError> {
        Ok(greedy_action(&self.q_values(obs)?))
    }

    /// `updates_per_round` gradient steps on fresh minibatches; returns the
    /// mean summed loss.
    pub fn update_round(&mut self, buffer: &ReplayBuffer) -> Result<f64, RlError> {
        let mut total = 0.0;
        let steps = self.config.updates_per_round;
        for j in 1..=steps {
            let batch = buffer.sample(&mut self.rng, self.config.batch_size);
            let targets = td_targets(
                &batch,
                &self.online[0],
                &self.target[0],
                &self.target[1],
                self.config.gamma,
                self.config.argmax_net,
            )?;
            let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
            let x = self.online[0].batch_matrix(batch.iter().map(|t| t.obs.as_slice()))?;
            let mut loss = 0.0;
            for i in 0..2 {
                let cache = self.online[i].forward_batch(x.clone())?;
                let (l, grad) = self.online[i].backward(&cache, &actions, &targets)?;
                loss += l;
                self.adam[i].step(&mut self.online[i], &grad)?;
            }
            self.updates += 1;
            if !loss.is_finite() || !self.online.iter().all(Mlp::is_finite) {
                return Err(self.diagnose(&batch, &targets, loss));
            }
            if j % 2 == 1 {
                for i in 0..2 {
                    polyak_update(&mut self.target[i], &self.online[i], self.config.rho)?;
                }
            }
            total += loss;
        }
        Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
    }

    fn diagnose(&self, batch: &[&Transition], targets: &[f64], loss: f64) -> RlError {
        let range = |v: &mut dyn Iterator<Item = f64>| {
            v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        };
        let norm = |m: &Mlp| m.params().map(|p| p * p).sum::<f64>().sqrt();
        let rewards = range(&mut batch.iter().map(|t| t.reward));
        let targ = range(&mut targets.iter().copied());
        RlError::NonFiniteLoss {
            samples: self.samples,
            update: self.updates,
            diagnostics: format!(
                "loss={loss}, reward range {rewards:?}, target range {targ:?}, online norms ({}, {}), target norms ({}, {})",
                norm(&self.online[0]),
                norm(&self.online[1]),
                norm(&self.target[0]),
                norm(&self.target[1])
            ),
        }
    }
}

/// Runs the learner until `agent.samples` reaches `stop_at`, calling
/// `on_round` after every round.
pub fn train<E: Environment + ?Sized>(
    env: &mut E,
    agent: &mut DqnAgent,
    buffer: &mut ReplayBuffer,
    stop_at: u64,
    mut on_round: impl FnMut(&RoundLog),
) -> Result<Vec<RoundLog>, RlError> {
    if env.obs_dim() != agent.online[0].input_dim() || env.num_actions() != agent.online[0].output_dim() {
        return Err(RlError::DimensionMismatch {
            expected: agent.online[0].input_dim(),
            got: env.obs_dim(),
        });
    }
    let mut logs = Vec::new();
    let mut obs = env.reset(&mut agent.rng)?;
    let mut episode_return = 0.0;
    while agent.samples < stop_at {
        let mut usage = vec![0u64; env.num_actions()];
        let (mut returns, mut falls) = (Vec::new(), 0u64);
        for _ in 0..agent.config.samples_per_update {
            if agent.samples >= stop_at {
                break;
            }
            let action = agent.act(&obs)?;
            let EnvStep {
                obs: next_obs,
                reward,
                terminal,
                truncated,
            } = env.step(action)?;
            buffer.push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward,
                done: terminal,
                next_obs: next_obs.clone(),
            });
            agent.samples += 1;
            usage[action] += 1;
            episode_return += reward;
            if terminal || truncated {
                returns.push(episode_return);
                falls += terminal as u64;
                episode_return = 0.0;
                obs = env.reset(&mut agent.rng)?;
            } else {
                obs = next_obs;
            }
        }
        let loss = if buffer.len() >= agent.config.learning_starts.max(1) {
            Some(agent.update_round(buffer)?)
        } else {
            None
        };
        agent.rounds += 1;
        let log = RoundLog {
            round: agent.rounds,
            samples: agent.samples,
            updates: agent.updates,
            loss,
            episodes: returns.len() as u64,
            falls,
            mean_return: (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64),
            usage,
        };
        on_round(&log);
        logs.push(log);
    }
    Ok(logs)
}
