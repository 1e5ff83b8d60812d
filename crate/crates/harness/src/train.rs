//! Training runs: checkpoint, per-round metrics and a config echo in the
//! output directory.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use hiergait::rl::{train, Checkpoint, DqnAgent, DqnConfig, ReplayBuffer, RoundLog, TreadmillTask};
use serde::Serialize;

use crate::config::{RunConfig, CODE_VERSION};
use crate::experiments::build_env;
use crate::report::write_file;
use crate::HarnessError;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Serialize)]
struct MetricsLine<'a> {
    config_hash: &'a str,
    code_version: &'a str,
    #[serde(flatten)]
    round: &'a RoundLog,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub samples: u64,
    pub rounds: u64,
    /// Mean return of the last round in which an episode ended.
    pub last_return: Option<f64>,
}

/// Trains until `cfg.dqn.max_samples` environment samples, starting fresh or
/// from `resume`. A resumed run keeps the learner state and sample count;
/// the replay buffer is not part of a checkpoint and refills from scratch.
pub fn run_training(cfg: &RunConfig, resume: Option<&Path>, progress: bool) -> Result<TrainOutcome, HarnessError> {
    let out = cfg.output_path();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let env = build_env(cfg);
    let layout = env.layout();
    let mut agent = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            ck.check_layout(&layout).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            ck.to_agent().map_err(|e| HarnessError::Runtime(e.to_string()))?
        }
        None => DqnAgent::new(layout.dim(), hiergait::primitives::NUM_PRIMITIVES, cfg.dqn_config())
            .map_err(|e| HarnessError::Usage(format!("dqn: {e}")))?,
    };
    // Schedule fields may change on resume; the network shape may not.
    let hidden = agent.config.hidden.clone();
    agent.config = DqnConfig {
        hidden,
        seed: agent.config.seed,
        ..cfg.dqn_config()
    };

    write_file(&out.join(CONFIG_FILE), &format!("# {CODE_VERSION}, config {}\n{}", cfg.hash(), cfg.to_toml()))?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&metrics_path)
        .map_err(|e| HarnessError::Runtime(format!("cannot open {}: {e}", metrics_path.display())))?;

    let mut task = TreadmillTask::new(env, cfg.scenarios.clone());
    let mut buffer = ReplayBuffer::new(cfg.dqn.replay_capacity);
    let hash = cfg.hash();
    let mut write_err = None;
    let started = std::time::Instant::now();
    let logs = train(&mut task, &mut agent, &mut buffer, cfg.dqn.max_samples, |round| {
        let line = MetricsLine {
            config_hash: &hash,
            code_version: CODE_VERSION,
            round,
        };
        let text = serde_json::to_string(&line).expect("metrics serialize");
        if let Err(e) = writeln!(metrics, "{text}") {
            write_err.get_or_insert(e);
        }
        if progress && round.round % 50 == 0 {
            log::info!(
                "{} samples, loss {:?}, return {:?}, {:.0?} elapsed",
                round.samples,
                round.loss,
                round.mean_return,
                started.elapsed()
            );
        }
    })
    .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    if let Some(e) = write_err {
        return Err(HarnessError::Runtime(format!("cannot write {}: {e}", metrics_path.display())));
    }

    let checkpoint = out.join(CHECKPOINT_FILE);
    Checkpoint::from_agent(&agent, Some(layout))
        .save(&checkpoint)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(TrainOutcome {
        checkpoint,
        metrics: metrics_path,
        samples: agent.samples,
        rounds: agent.rounds,
        last_return: logs.iter().rev().find_map(|l| l.mean_return),
    })
}
