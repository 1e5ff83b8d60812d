use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, DqnAgent, DqnConfig, LayerRecord, Mlp, RlError};
use crate::sim::ObservationLayout;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<LayerRecord>,
    pub v: Vec<LayerRecord>,
}

/// Complete learner state as JSON. Floats are written in shortest
/// round-trip form, so save → load reproduces every parameter bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub code_version: String,
    /// Absent for non-treadmill tasks.
    pub observation_layout: Option<ObservationLayout>,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub config: DqnConfig,
    pub seed: u64,
    pub samples: u64,
    pub updates: u64,
    pub rounds: u64,
    pub online: Vec<Vec<LayerRecord>>,
    pub target: Vec<Vec<LayerRecord>>,
    pub adam: Vec<AdamRecord>,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn from_agent(agent: &DqnAgent, layout: Option<ObservationLayout>) -> Self {
        let adam = agent
            .adam
            .iter()
            .map(|a| AdamRecord {
                learning_rate: a.learning_rate,
                beta1: a.beta1,
                beta2: a.beta2,
                epsilon: a.epsilon,
                t: a.t,
                m: a.m.to_records(),
                v: a.v.to_records(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            code_version: env!("CARGO_PKG_VERSION").into(),
            observation_layout: layout,
            obs_dim: agent.online[0].input_dim(),
            num_actions: agent.online[0].output_dim(),
            config: agent.config.clone(),
            seed: agent.config.seed,
            samples: agent.samples,
            updates: agent.updates,
            rounds: agent.rounds,
            online: agent.online.iter().map(Mlp::to_records).collect(),
            target: agent.target.iter().map(Mlp::to_records).collect(),
            adam,
            rng: agent.rng.clone(),
        }
    }

    fn pair<T>(v: Vec<T>, what: &str) -> Result<[T; 2], RlError> {
        v.try_into()
            .map_err(|_| RlError::Checkpoint(format!("expected exactly two {what} networks")))
    }

    pub fn to_agent(&self) -> Result<DqnAgent, RlError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(RlError::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.config.validate()?;
        let online = Self::pair(
            self.online.iter().map(|r| Mlp::from_records(r)).collect::<Result<Vec<_>, _>>()?,
            "online",
        )?;
        let target = Self::pair(
            self.target.iter().map(|r| Mlp::from_records(r)).collect::<Result<Vec<_>, _>>()?,
            "target",
        )?;
        let adam = Self::pair(
            self.adam
                .iter()
                .map(|a| {
                    Ok(Adam {
                        learning_rate: a.learning_rate,
                        beta1: a.beta1,
                        beta2: a.beta2,
                        epsilon: a.epsilon,
                        t: a.t,
                        m: Mlp::from_records(&a.m)?,
                        v: Mlp::from_records(&a.v)?,
                    })
                })
                .collect::<Result<Vec<_>, RlError>>()?,
            "optimizer",
        )?;
        let sizes = online[0].sizes();
        let consistent = online[1].sizes() == sizes
            && target.iter().all(|t| t.sizes() == sizes)
            && adam.iter().all(|a| a.m.sizes() == sizes && a.v.sizes() == sizes)
            && sizes.first() == Some(&self.obs_dim)
            && sizes.last() == Some(&self.num_actions);
        if !consistent {
            return Err(RlError::Checkpoint("network shapes disagree with each other or the header".into()));
        }
        Ok(DqnAgent {
            config: self.config.clone(),
            online,
            target,
            adam,
            samples: self.samples,
            updates: self.updates,
            rounds: self.rounds,
            rng: self.rng.clone(),
        })
    }

    /// The greedy network (online 1).
    pub fn policy_net(&self) -> Result<Mlp, RlError> {
        let first = self
            .online
            .first()
            .ok_or_else(|| RlError::Checkpoint("no online network".into()))?;
        Mlp::from_records(first)
    }

    /// Refuses checkpoints trained on a different observation layout.
    pub fn check_layout(&self, expected: &ObservationLayout) -> Result<(), RlError> {
        match self.observation_layout {
            Some(l) if l.version == expected.version && l.twist == expected.twist => Ok(()),
            Some(l) => Err(RlError::LayoutMismatch {
                expected: expected.version,
                found: l.version,
            }),
            None => Err(RlError::Checkpoint("checkpoint carries no observation layout".into())),
        }
        .and_then(|_| {
            if self.obs_dim == expected.dim() {
                Ok(())
            } else {
                Err(RlError::DimensionMismatch {
                    expected: expected.dim(),
                    got: self.obs_dim,
                })
            }
        })
    }

    pub fn to_json(&self) -> Result<String, RlError> {
        serde_json::to_string(self).map_err(|e| RlError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        serde_json::from_str(text).map_err(|e| RlError::Checkpoint(format!("cannot parse: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| RlError::Checkpoint(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RlError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
