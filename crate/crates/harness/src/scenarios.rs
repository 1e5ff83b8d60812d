//! Scenario strings for the command line and the evaluation grids.

use hiergait::model::{FOOT_NAMES, NUM_FEET};
use hiergait::sim::Scenario;

use crate::config::EvalConfig;
use crate::HarnessError;

/// Parses one of
/// `still`, `uniform:V`, `split:VL:VR[:YAW]`, `one-belt:V:left|right[:YAW]`,
/// `bridge:V`, `peel:FOOT:MU` (speeds m/s, yaw degrees, foot by name or index).
pub fn parse_scenario(spec: &str) -> Result<Scenario, HarnessError> {
    let bad = |why: &str| HarnessError::Usage(format!("scenario `{spec}`: {why}"));
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |i: usize, what: &str| -> Result<f64, HarnessError> {
        parts
            .get(i)
            .ok_or_else(|| bad(&format!("missing {what}")))?
            .parse::<f64>()
            .map_err(|_| bad(&format!("{what} is not a number")))
    };
    let yaw = |i: usize| -> Result<f64, HarnessError> {
        if parts.len() > i {
            Ok(num(i, "yaw")?.to_radians())
        } else {
            Ok(0.0)
        }
    };
    let scenario = match parts[0] {
        "still" => Scenario::still(),
        "uniform" => Scenario::uniform(num(1, "speed")?),
        "split" => Scenario {
            belt_speed_left: num(1, "left speed")?,
            belt_speed_right: num(2, "right speed")?,
            commanded_yaw: yaw(3)?,
            ..Scenario::still()
        },
        "one-belt" => {
            let left = match parts.get(2).copied() {
                Some("left") => true,
                Some("right") => false,
                _ => return Err(bad("moving side must be `left` or `right`")),
            };
            Scenario::one_belt(num(1, "speed")?, left, yaw(3)?)
        }
        "bridge" => Scenario::bridge(num(1, "speed")?),
        "peel" => {
            let foot = parts.get(1).ok_or_else(|| bad("missing foot"))?;
            let foot = FOOT_NAMES
                .iter()
                .position(|n| n.eq_ignore_ascii_case(foot))
                .or_else(|| foot.parse::<usize>().ok().filter(|&i| i < NUM_FEET))
                .ok_or_else(|| bad("foot must be LF, RF, LR, RR or 0-3"))?;
            Scenario::banana_peel(foot, num(2, "friction")?)
        }
        other => return Err(bad(&format!("unknown kind `{other}`"))),
    };
    scenario.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(scenario)
}

/// Named scenario sets used by `compare` and `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScenarioSet {
    /// Both belts at `0, step, …, max_speed`.
    Speed,
    /// One belt at `one_belt_speed`, either side, over the training headings.
    Yaw,
    /// Per-belt speeds × pause pattern × headings from `eval.grid_*`.
    Training,
    Bridge,
    /// Zero friction under each foot in turn.
    Peel,
    Still,
}

pub fn speed_grid(eval: &EvalConfig) -> Vec<Scenario> {
    let n = (eval.max_speed / eval.speed_step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| Scenario::uniform(round_grid(k as f64 * eval.speed_step)))
        .collect()
}

pub fn yaw_grid(eval: &EvalConfig, yaws: &[f64]) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &yaw in yaws {
        for left in [true, false] {
            out.push(Scenario::one_belt(eval.one_belt_speed, left, yaw));
        }
    }
    out
}

pub fn training_grid(eval: &EvalConfig) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &yaw_deg in &eval.grid_yaws_deg {
        for &left in &eval.grid_speeds {
            for &right in &eval.grid_speeds {
                for (left_active, right_active) in [(true, true), (false, true), (true, false)] {
                    out.push(Scenario {
                        belt_speed_left: left,
                        belt_speed_right: right,
                        left_active,
                        right_active,
                        commanded_yaw: yaw_deg.to_radians(),
                        ..Scenario::still()
                    });
                }
            }
        }
    }
    out
}

pub fn scenario_set(set: ScenarioSet, eval: &EvalConfig, yaws: &[f64]) -> Vec<Scenario> {
    match set {
        ScenarioSet::Speed => speed_grid(eval),
        ScenarioSet::Yaw => yaw_grid(eval, yaws),
        ScenarioSet::Training => training_grid(eval),
        ScenarioSet::Bridge => vec![Scenario::bridge(eval.one_belt_speed)],
        ScenarioSet::Peel => (0..NUM_FEET).map(|f| Scenario::banana_peel(f, 0.0)).collect(),
        ScenarioSet::Still => vec![Scenario::still()],
    }
}

/// Removes the float noise of `k · step` so grid speeds print cleanly.
fn round_grid(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}
