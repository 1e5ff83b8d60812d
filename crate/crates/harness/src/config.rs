//! Run configuration: one TOML file, every field defaulted, dotted-path
//! overrides from the command line.

use std::path::{Path, PathBuf};

use hiergait::controller::GainSet;
use hiergait::model::PhysicalParams;
use hiergait::primitives::SelectionMode;
use hiergait::qp::{QpSettings, QpWeights};
use hiergait::rl::DqnConfig;
use hiergait::sim::{ScenarioDistribution, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// Relative output directories resolve under this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "HIERGAIT_OUTPUT_ROOT";

pub const CODE_VERSION: &str = concat!("hiergait ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Standing,
    Trotting,
    Pacing,
    Walking,
    Heuristic,
    Learned,
}

impl ControllerKind {
    pub const BASELINES: [ControllerKind; 5] = [
        ControllerKind::Standing,
        ControllerKind::Trotting,
        ControllerKind::Pacing,
        ControllerKind::Walking,
        ControllerKind::Heuristic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Standing => "standing",
            ControllerKind::Trotting => "trotting",
            ControllerKind::Pacing => "pacing",
            ControllerKind::Walking => "walking",
            ControllerKind::Heuristic => "heuristic",
            ControllerKind::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Needed by the learned controller.
    pub checkpoint: Option<PathBuf>,
    pub k_q: f64,
    pub mode: SelectionMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Trotting,
            checkpoint: None,
            k_q: hiergait::policy::DEFAULT_K_Q,
            mode: SelectionMode::Min,
        }
    }
}

/// Evaluation grids and fan-out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Start-pose seeds per (controller, scenario) cell.
    pub seeds: u64,
    /// Uniform-speed grid: `0, step, …, max_speed`.
    pub speed_step: f64,
    pub max_speed: f64,
    /// Belt speed of the one-belt-moving yaw sweep.
    pub one_belt_speed: f64,
    /// Per-belt speeds of the training-scenario grid.
    pub grid_speeds: Vec<f64>,
    /// Commanded headings of the training-scenario grid, degrees. The
    /// default is every heading the training distribution can draw.
    pub grid_yaws_deg: Vec<f64>,
    /// Worker threads; results never depend on it.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: 10,
            speed_step: 0.05,
            max_speed: 0.3,
            one_belt_speed: 0.3,
            grid_speeds: vec![-0.3, 0.0, 0.3],
            grid_yaws_deg: (-5..=6).map(|k| 30.0 * k as f64).collect(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub physical: PhysicalParams,
    pub gains: GainSet,
    pub qp: QpSettings,
    pub weights: QpWeights,
    pub sim: SimConfig,
    /// `dqn.seed` is replaced by the top-level `seed` when training.
    pub dqn: DqnConfig,
    pub scenarios: ScenarioDistribution,
    pub controller: ControllerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            physical: PhysicalParams::default(),
            gains: GainSet::default(),
            qp: QpSettings::default(),
            weights: QpWeights::default(),
            sim: SimConfig::default(),
            dqn: DqnConfig::default(),
            scenarios: ScenarioDistribution::default(),
            controller: ControllerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Usage(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Loads `path` (or the defaults) and applies `key.path=value` overrides
    /// in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut value: toml::Table = toml::from_str(&text).map_err(|e| HarnessError::Usage(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Usage(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Field-level checks; the first failure is reported by path.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: String| Err(HarnessError::Usage(m));
        if let Err(e) = self.physical.validate() {
            return usage(format!("physical: {e}"));
        }
        if !self.gains.is_valid() {
            return usage("gains: every gain must be finite and non-negative".into());
        }
        if !self.weights.is_valid() {
            return usage("weights: weights must be finite and non-negative, with some q_weight positive".into());
        }
        if !(self.qp.tolerance > 0.0) || self.qp.max_iterations == 0 {
            return usage("qp: tolerance must be positive and max_iterations at least 1".into());
        }
        self.sim.validate().or_else(usage)?;
        self.scenarios.validate().or_else(usage)?;
        if let Err(e) = self.dqn.validate() {
            return usage(format!("dqn: {e}"));
        }
        if !(self.controller.k_q >= 0.0 && self.controller.k_q.is_finite()) {
            return usage("controller.k_q must be finite and non-negative".into());
        }
        let e = &self.eval;
        if e.seeds == 0 {
            return usage("eval.seeds must be at least 1".into());
        }
        if !(e.speed_step > 0.0) {
            return usage("eval.speed_step must be positive".into());
        }
        let speeds = [e.max_speed, e.one_belt_speed].into_iter().chain(e.grid_speeds.iter().copied());
        for s in speeds {
            if !(s.abs() <= hiergait::sim::MAX_BELT_SPEED) {
                return usage(format!("eval speeds must lie within ±{} m/s, got {s}", hiergait::sim::MAX_BELT_SPEED));
            }
        }
        if e.jobs == 0 {
            return usage("eval.jobs must be at least 1".into());
        }
        Ok(())
    }

    /// Short digest of the resolved configuration, embedded in every output.
    /// The output directory and thread count do not affect results and are
    /// left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.eval.jobs = 1;
        let json = serde_json::to_string(&canonical).expect("config always serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    /// `output_dir`, placed under the output-root variable when relative.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            seed: self.seed,
            ..self.dqn.clone()
        }
    }
}

/// `a.b.c=value`; the value is read as TOML and falls back to a plain string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), HarnessError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Usage(format!("override `{spec}` is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Usage(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut table = root;
    for key in &keys[..keys.len() - 1] {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Usage(format!("override `{spec}`: `{key}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
