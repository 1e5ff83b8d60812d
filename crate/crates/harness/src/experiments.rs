//! Controller × scenario × seed evaluation, fanned out over a fixed-size
//! thread pool and merged in request order.

use std::path::Path;

use hiergait::policy::{run_episode_seeded, FixedGait, FixedGaitPolicy, HeuristicPolicy, HighLevelPolicy};
use hiergait::primitives::{Primitive, NUM_PRIMITIVES};
use hiergait::rl::{Checkpoint, LearnedPolicy, Mlp};
use hiergait::sim::{energy_metric, EnergyMetric, EpisodeStats, Scenario, TreadmillEnv};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ControllerKind, RunConfig};
use crate::HarnessError;

pub fn build_env(cfg: &RunConfig) -> TreadmillEnv {
    TreadmillEnv::new(cfg.physical.clone(), cfg.gains, cfg.weights, cfg.qp.clone(), cfg.sim.clone())
}

/// Loads a checkpoint and returns its greedy network, refusing one trained
/// on a different observation layout.
pub fn load_policy_net(path: &Path, cfg: &RunConfig) -> Result<Mlp, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::Runtime(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    ck.check_layout(&build_env(cfg).layout())
        .map_err(|e| HarnessError::Runtime(format!("checkpoint {}: {e}", path.display())))?;
    let net = ck.policy_net().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    LearnedPolicy::new(net.clone()).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(net)
}

pub fn make_policy(kind: ControllerKind, cfg: &RunConfig, net: Option<&Mlp>) -> Result<Box<dyn HighLevelPolicy>, HarnessError> {
    Ok(match kind {
        ControllerKind::Standing => Box::new(FixedGaitPolicy::new(FixedGait::Standing)),
        ControllerKind::Trotting => Box::new(FixedGaitPolicy::new(FixedGait::Trotting)),
        ControllerKind::Pacing => Box::new(FixedGaitPolicy::new(FixedGait::Pacing)),
        ControllerKind::Walking => Box::new(FixedGaitPolicy::new(FixedGait::Walking)),
        ControllerKind::Heuristic => Box::new(HeuristicPolicy {
            k_q: cfg.controller.k_q,
            mode: cfg.controller.mode,
        }),
        ControllerKind::Learned => {
            let net = net.ok_or_else(|| HarnessError::Usage("the learned controller needs a checkpoint".into()))?;
            Box::new(LearnedPolicy::new(net.clone()).map_err(|e| HarnessError::Runtime(e.to_string()))?)
        }
    })
}

/// Start-pose seed of repetition `k`.
pub fn episode_seed(base: u64, k: u64) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(k)
}

/// Aggregate over the seeds of one (controller, scenario) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub controller: ControllerKind,
    pub scenario: Scenario,
    pub seeds: u64,
    pub falls: u64,
    /// Mean over seeds that completed; `None` as soon as any seed fell.
    pub energy: Option<f64>,
    pub mean_return: f64,
    /// Decisions per primitive, summed over seeds.
    pub histogram: [u64; NUM_PRIMITIVES],
    /// Fraction of ticks in which LF or RF was commanded to swing.
    pub front_lift_fraction: f64,
}

impl CellResult {
    pub fn fall_rate(&self) -> f64 {
        self.falls as f64 / self.seeds as f64
    }

    pub fn stand_fraction(&self) -> f64 {
        let total: u64 = self.histogram.iter().sum();
        if total == 0 {
            0.0
        } else {
            self.histogram[Primitive::Stand.id()] as f64 / total as f64
        }
    }
}

pub fn run_cell(
    cfg: &RunConfig,
    kind: ControllerKind,
    net: Option<&Mlp>,
    scenario: Scenario,
) -> Result<CellResult, HarnessError> {
    let mut env = build_env(cfg);
    let mut policy = make_policy(kind, cfg, net)?;
    let mut episodes: Vec<EpisodeStats> = Vec::new();
    for k in 0..cfg.eval.seeds {
        let stats = run_episode_seeded(&mut env, policy.as_mut(), scenario, episode_seed(cfg.seed, k))
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        episodes.push(stats);
    }
    let falls = episodes.iter().filter(|s| s.fell).count() as u64;
    let mut energies = Vec::new();
    for s in &episodes {
        match energy_metric(s, cfg.sim.episode_seconds).map_err(|e| HarnessError::Runtime(e.to_string()))? {
            EnergyMetric::Completed(e) => energies.push(e),
            EnergyMetric::Fell => {}
        }
    }
    let energy = (falls == 0).then(|| energies.iter().sum::<f64>() / energies.len() as f64);
    let mut histogram = [0u64; NUM_PRIMITIVES];
    let (mut lifted, mut ticks) = (0u64, 0u64);
    for s in &episodes {
        for (h, c) in histogram.iter_mut().zip(s.primitive_histogram) {
            *h += c;
        }
        ticks += s.contact_log.len() as u64;
        lifted += s.contact_log.iter().filter(|c| !(c[0] && c[1])).count() as u64;
    }
    Ok(CellResult {
        controller: kind,
        scenario,
        seeds: cfg.eval.seeds,
        falls,
        energy,
        mean_return: episodes.iter().map(|s| s.total_reward).sum::<f64>() / episodes.len() as f64,
        histogram,
        front_lift_fraction: if ticks == 0 { 0.0 } else { lifted as f64 / ticks as f64 },
    })
}

/// Runs every (controller, scenario) pair, controller-major, on
/// `cfg.eval.jobs` threads. Output order never depends on the thread count.
pub fn run_cells(
    cfg: &RunConfig,
    controllers: &[ControllerKind],
    scenarios: &[Scenario],
    net: Option<&Mlp>,
) -> Result<Vec<CellResult>, HarnessError> {
    let cells: Vec<(ControllerKind, Scenario)> = controllers
        .iter()
        .flat_map(|&c| scenarios.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.eval.jobs)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(c, s)| run_cell(cfg, c, net, s))
            .collect::<Result<Vec<_>, _>>()
    })
}
