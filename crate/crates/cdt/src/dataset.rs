//! JSON-lines dataset files: one scenario per line, coordinates in meters
//! with six decimals.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cdt_core::scene::{label_behavior, AgentHistory, Behavior, DrivableArea, LanePolyline, Point, Scenario};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneRecord {
    points: Vec<Point>,
    successors: Vec<usize>,
    width: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentRecord {
    id: u32,
    positions: Vec<Point>,
    mask: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioRecord {
    id: String,
    lanes: Vec<LaneRecord>,
    drivable: Vec<Vec<Point>>,
    agents: Vec<AgentRecord>,
    future: Vec<Point>,
    label: Behavior,
    intersection: bool,
}

fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn pts(p: &[Point]) -> Vec<Point> {
    p.iter().map(|q| [round6(q[0]), round6(q[1])]).collect()
}

impl From<&Scenario> for ScenarioRecord {
    fn from(s: &Scenario) -> Self {
        ScenarioRecord {
            id: s.id.clone(),
            lanes: s
                .lanes
                .iter()
                .map(|l| LaneRecord { points: pts(&l.points), successors: l.successors.clone(), width: round6(l.width) })
                .collect(),
            drivable: s.drivable.polygons.iter().map(|p| pts(p)).collect(),
            agents: s
                .agents
                .iter()
                .map(|a| AgentRecord { id: a.id, positions: pts(&a.positions), mask: a.mask.clone() })
                .collect(),
            future: pts(&s.future),
            label: s.label,
            intersection: s.is_intersection,
        }
    }
}

impl From<ScenarioRecord> for Scenario {
    fn from(r: ScenarioRecord) -> Self {
        Scenario {
            id: r.id,
            lanes: r.lanes.into_iter().map(|l| LanePolyline { points: l.points, successors: l.successors, width: l.width }).collect(),
            drivable: DrivableArea { polygons: r.drivable },
            agents: r.agents.into_iter().map(|a| AgentHistory { id: a.id, positions: a.positions, mask: a.mask }).collect(),
            future: r.future,
            label: r.label,
            is_intersection: r.intersection,
        }
    }
}

/// One scenario as a single JSON line (no trailing newline).
pub fn to_line(s: &Scenario) -> String {
    serde_json::to_string(&ScenarioRecord::from(s)).expect("scenario records always serialize")
}

/// Parses and validates one line; `line` is 1-based and only used in errors.
pub fn from_line(text: &str, path: &Path, line: usize) -> Result<Scenario> {
    let rec: ScenarioRecord = serde_json::from_str(text).map_err(|e| {
        let detail = e.to_string();
        match e.classify() {
            serde_json::error::Category::Data => CliError::Schema { path: path.to_path_buf(), line, detail },
            _ => CliError::Parse { path: path.to_path_buf(), line, detail },
        }
    })?;
    let s = Scenario::from(rec);
    let schema = |detail: String| CliError::Schema { path: path.to_path_buf(), line, detail };
    s.validate().map_err(|e| schema(format!("scenario {}: {e}", s.id)))?;
    let derived = label_behavior(&s.future);
    if derived != s.label {
        return Err(schema(format!("scenario {}: label {} but the future is {}", s.id, s.label.as_str(), derived.as_str())));
    }
    Ok(s)
}

pub fn write_dataset(path: &Path, scenes: &[Scenario]) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in scenes {
        writeln!(w, "{}", to_line(s)).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads every scenario; blank lines are skipped and an empty file is an
/// empty dataset.
pub fn read_dataset(path: &Path) -> Result<Vec<Scenario>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_line(&line, path, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdt_core::scene::{generate_scenario, DatasetConfig};

    #[test]
    fn line_roundtrip() {
        let cfg = DatasetConfig::default();
        for i in 0..20 {
            let s = generate_scenario(&cfg, i).unwrap();
            let back = from_line(&to_line(&s), Path::new("mem"), 1).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn keys_and_decimals() {
        let s = generate_scenario(&DatasetConfig::default(), 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&to_line(&s)).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, ["agents", "drivable", "future", "id", "intersection", "label", "lanes"]);
        assert_eq!(round6(1.23456789), 1.234568);
        assert_eq!(round6(-1e-9).to_string(), "0");
    }
}
