//! Comma-delimited report tables. Numbers are written in shortest
//! round-trip form; a fallen cell's energy is the `FAIL` sentinel.

use std::path::Path;

use hiergait::model::FOOT_NAMES;
use hiergait::primitives::Primitive;

use crate::config::{RunConfig, CODE_VERSION};
use crate::experiments::CellResult;
use crate::HarnessError;

pub const FAIL: &str = "FAIL";

const HEADER: [&str; 20] = [
    "controller",
    "scenario",
    "belt_speed_left",
    "belt_speed_right",
    "left_active",
    "right_active",
    "yaw_deg",
    "bridge",
    "slip_foot",
    "slip_mu",
    "seeds",
    "energy",
    "mean_return",
    "fall_rate",
    "stand_fraction",
    "front_lift_fraction",
    "top_primitive",
    "histogram",
    "config_hash",
    "code_version",
];

/// One row per cell, in the order given.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub cells: Vec<CellResult>,
}

impl ComparisonReport {
    pub fn new(cfg: &RunConfig, cells: Vec<CellResult>) -> Self {
        Self {
            config_hash: cfg.hash(),
            cells,
        }
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| HarnessError::Runtime(format!("cannot format report: {e}"));
        w.write_record(HEADER).map_err(io)?;
        for c in &self.cells {
            let s = &c.scenario;
            let top = (0..c.histogram.len()).max_by_key(|&i| (c.histogram[i], std::cmp::Reverse(i))).unwrap_or(0);
            let histogram = c.histogram.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
            w.write_record([
                c.controller.name().to_string(),
                s.describe(),
                s.belt_speed_left.to_string(),
                s.belt_speed_right.to_string(),
                s.left_active.to_string(),
                s.right_active.to_string(),
                s.commanded_yaw.to_degrees().round().to_string(),
                s.bridge.to_string(),
                s.slip.map_or(String::new(), |p| FOOT_NAMES[p.foot].to_string()),
                s.slip.map_or(String::new(), |p| p.friction.to_string()),
                c.seeds.to_string(),
                c.energy.map_or(FAIL.to_string(), |e| e.to_string()),
                c.mean_return.to_string(),
                c.fall_rate().to_string(),
                c.stand_fraction().to_string(),
                c.front_lift_fraction.to_string(),
                Primitive::ALL[top].name().to_string(),
                histogram,
                self.config_hash.clone(),
                CODE_VERSION.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("report is UTF-8"))
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        write_file(path, &self.to_csv()?)
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::Runtime(format!("cannot write {}: {e}", path.display())))
}
