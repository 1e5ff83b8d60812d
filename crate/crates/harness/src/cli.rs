//! Subcommands. `run` returns the process exit code so the binary stays a
//! one-liner and tests can drive the CLI in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hiergait::controller::target_acceleration;
use hiergait::model::{build_m, gravity_augmented};
use hiergait::policy::run_episode_seeded;
use hiergait::primitives::Primitive;
use hiergait::qp::build_force_qp;
use serde::Serialize;

use crate::config::{ControllerKind, RunConfig, CODE_VERSION};
use crate::experiments::{build_env, episode_seed, load_policy_net, make_policy, run_cells};
use crate::report::{write_file, ComparisonReport};
use crate::scenarios::{parse_scenario, scenario_set, ScenarioSet};
use crate::train::run_training;
use crate::HarnessError;

#[derive(Debug, Parser)]
#[command(name = "hiergait", version, about = "Train, evaluate and compare treadmill gait controllers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything missing.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `--set dqn.gamma=0.95`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (relative paths go under $HIERGAIT_OUTPUT_ROOT).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation cells.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut overrides = self.overrides.clone();
        if let Some(o) = &self.output {
            overrides.push(format!("output_dir={}", toml_string(&o.to_string_lossy())));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(j) = self.jobs {
            overrides.push(format!("eval.jobs={j}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the high-level Q-networks.
    Train {
        #[command(flatten)]
        common: Common,
        /// Stop after this many environment samples (sets dqn.max_samples).
        #[arg(long)]
        samples: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint on scenario sets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "scenarios", value_enum, value_delimiter = ',', default_value = "training,bridge,peel,still")]
        sets: Vec<ScenarioSet>,
    },
    /// Energy / fall table for controllers over scenario grids.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "standing,trotting,pacing,walking,heuristic")]
        controllers: Vec<ControllerKind>,
        #[arg(long = "grid", value_enum, value_delimiter = ',', default_value = "speed")]
        grids: Vec<ScenarioSet>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report file name inside the output directory.
        #[arg(long, default_value = "compare.csv")]
        report: String,
    },
    /// One episode with a per-tick contact log.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        controller: Option<ControllerKind>,
        /// e.g. `still`, `one-belt:0.3:right:90`, `bridge:0.2`, `peel:LR:0`.
        #[arg(long, default_value = "still")]
        scenario: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the force QP of a primitive at the scenario's start pose.
    ExportQp {
        #[command(flatten)]
        common: Common,
        /// Primitive name (Stand, Trot1, …) or id 0-8.
        #[arg(long, default_value = "Stand")]
        primitive: String,
        #[arg(long, default_value = "still")]
        scenario: String,
        /// Write here instead of stdout.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn checkpoint_net(
    cfg: &RunConfig,
    flag: Option<PathBuf>,
    required: bool,
) -> Result<Option<hiergait::rl::Mlp>, HarnessError> {
    match flag.or_else(|| cfg.controller.checkpoint.clone()) {
        Some(p) => load_policy_net(&p, cfg).map(Some),
        None if required => Err(HarnessError::Usage("a checkpoint is required (--checkpoint or controller.checkpoint)".into())),
        None => Ok(None),
    }
}

fn scenarios_for(cfg: &RunConfig, sets: &[ScenarioSet]) -> Vec<hiergait::sim::Scenario> {
    let yaws = cfg.scenarios.yaw_grid();
    sets.iter().flat_map(|&s| scenario_set(s, &cfg.eval, &yaws)).collect()
}

pub fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Train { common, samples, resume } => {
            let mut cfg = common.resolve()?;
            if let Some(n) = samples {
                cfg.dqn.max_samples = n;
            }
            let out = run_training(&cfg, resume.as_deref(), true)?;
            println!("{} samples in {} rounds; checkpoint {}", out.samples, out.rounds, out.checkpoint.display());
            Ok(())
        }
        Command::Eval { common, checkpoint, sets } => {
            let cfg = common.resolve()?;
            let net = checkpoint_net(&cfg, checkpoint, true)?;
            let cells = run_cells(&cfg, &[ControllerKind::Learned], &scenarios_for(&cfg, &sets), net.as_ref())?;
            let path = cfg.output_path().join("eval.csv");
            ComparisonReport::new(&cfg, cells).write(&path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Compare {
            common,
            controllers,
            grids,
            checkpoint,
            report,
        } => {
            let cfg = common.resolve()?;
            let needs_net = controllers.contains(&ControllerKind::Learned);
            let net = checkpoint_net(&cfg, checkpoint, needs_net)?;
            let cells = run_cells(&cfg, &controllers, &scenarios_for(&cfg, &grids), net.as_ref())?;
            let path = cfg.output_path().join(report);
            ComparisonReport::new(&cfg, cells).write(&path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Rollout {
            common,
            controller,
            scenario,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let kind = controller.unwrap_or(cfg.controller.kind);
            let scenario = parse_scenario(&scenario)?;
            let net = checkpoint_net(&cfg, checkpoint, kind == ControllerKind::Learned)?;
            rollout(&cfg, kind, scenario, net.as_ref())
        }
        Command::ExportQp {
            common,
            primitive,
            scenario,
            file,
        } => {
            let cfg = common.resolve()?;
            let text = export_qp(&cfg, &primitive, &parse_scenario(&scenario)?)?;
            match file {
                Some(p) => write_file(&p, &text),
                None => std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| HarnessError::Runtime(e.to_string())),
            }
        }
    }
}

#[derive(Serialize)]
struct LogHeader<'a> {
    config_hash: &'a str,
    code_version: &'a str,
    controller: &'a str,
    scenario: &'a hiergait::sim::Scenario,
    seed: u64,
}

#[derive(Serialize)]
struct StatsFile<'a> {
    config_hash: &'a str,
    code_version: &'a str,
    controller: &'a str,
    scenario: &'a hiergait::sim::Scenario,
    seed: u64,
    stats: &'a hiergait::sim::EpisodeStats,
}

/// Writes `contacts.jsonl` (a header line, then one record per tick) and
/// `stats.json` into the output directory.
pub fn rollout(
    cfg: &RunConfig,
    kind: ControllerKind,
    scenario: hiergait::sim::Scenario,
    net: Option<&hiergait::rl::Mlp>,
) -> Result<(), HarnessError> {
    let mut env = build_env(cfg);
    env.set_recording(true);
    let mut policy = make_policy(kind, cfg, net)?;
    let seed = episode_seed(cfg.seed, 0);
    let stats = run_episode_seeded(&mut env, policy.as_mut(), scenario, seed).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let hash = cfg.hash();
    let mut log = json(&LogHeader {
        config_hash: &hash,
        code_version: CODE_VERSION,
        controller: kind.name(),
        scenario: &scenario,
        seed,
    });
    log.push('\n');
    for r in env.contact_records() {
        log.push_str(&serde_json::to_string(r).expect("records serialize"));
        log.push('\n');
    }
    let out = cfg.output_path();
    write_file(&out.join("contacts.jsonl"), &log)?;
    let stats_file = StatsFile {
        config_hash: &hash,
        code_version: CODE_VERSION,
        controller: kind.name(),
        scenario: &scenario,
        seed,
        stats: &stats,
    };
    write_file(&out.join("stats.json"), &(json(&stats_file) + "\n"))?;
    println!(
        "{} on {}: {} after {:.1} s, energy {}",
        kind.name(),
        scenario.describe(),
        if stats.fell { "fell" } else { "survived" },
        stats.time_s,
        stats.mean_sq_torque
    );
    Ok(())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("output serializes")
}

/// The force QP of `primitive` at the scenario's start pose, as text.
pub fn export_qp(cfg: &RunConfig, primitive: &str, scenario: &hiergait::sim::Scenario) -> Result<String, HarnessError> {
    let prim = Primitive::ALL
        .into_iter()
        .find(|p| p.name().eq_ignore_ascii_case(primitive))
        .or_else(|| primitive.parse::<usize>().ok().and_then(Primitive::from_id))
        .ok_or_else(|| HarnessError::Usage(format!("unknown primitive `{primitive}`")))?;
    let mut env = build_env(cfg);
    env.reset(*scenario).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let state = env.state().robot;
    let command = env.command();
    let accel = target_acceleration(&command, &state, &cfg.gains);
    let m = build_m(&state, &cfg.physical).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let g = gravity_augmented(&cfg.physical.gravity);
    let limits = env.controller_mut().limits();
    let problem = build_force_qp(&accel, &m, &g, &prim.pattern(), &cfg.weights, &limits)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(format!(
        "# {CODE_VERSION}, config {}, primitive {}, scenario {}\n{}",
        cfg.hash(),
        prim.name(),
        scenario.describe(),
        problem.to_text()
    ))
}
