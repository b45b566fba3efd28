use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::geometry;
use crate::error::{bail, Result};

/// Observed history length (5 s at 10 Hz).
pub const HISTORY_LEN: usize = 50;
/// Predicted horizon (6 s at 10 Hz).
pub const FUTURE_LEN: usize = 60;
/// Sampling period in seconds.
pub const DT: f64 = 0.1;

/// 2-D position in meters.
pub type Point = [f64; 2];

/// Coarse driving behavior of the focal agent over the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Straight,
    Left,
    Right,
}

impl Behavior {
    pub const ALL: [Behavior; 3] = [Behavior::Straight, Behavior::Left, Behavior::Right];

    pub fn index(self) -> usize {
        match self {
            Behavior::Straight => 0,
            Behavior::Left => 1,
            Behavior::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Straight => "straight",
            Behavior::Left => "left",
            Behavior::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

/// Lane centerline as an ordered polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePolyline {
    pub points: Vec<Point>,
    /// Indices of the lanes that continue this one.
    pub successors: Vec<usize>,
    pub width: f64,
}

impl LanePolyline {
    pub fn validate(&self, n_lanes: usize) -> Result<()> {
        if self.points.len() < 2 {
            bail!(Input, "lane has {} points, need at least 2", self.points.len());
        }
        if !(self.width > 0.0) {
            bail!(Input, "lane width must be positive, got {}", self.width);
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            bail!(Input, "lane has non-finite coordinates");
        }
        if self.points.windows(2).any(|w| w[0] == w[1]) {
            bail!(Input, "lane has coincident consecutive points");
        }
        if let Some(&s) = self.successors.iter().find(|&&s| s >= n_lanes) {
            bail!(Input, "successor {s} out of range for {n_lanes} lanes");
        }
        Ok(())
    }
}

/// Union of simple counter-clockwise polygons.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DrivableArea {
    pub polygons: Vec<Vec<Point>>,
}

impl DrivableArea {
    pub fn validate(&self) -> Result<()> {
        for (i, poly) in self.polygons.iter().enumerate() {
            geometry::validate_polygon(poly).map_err(|e| crate::Error::Input(format!("polygon {i}: {e}")))?;
        }
        Ok(())
    }

    /// Inside or on the boundary of any polygon.
    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| geometry::point_in_polygon(p, poly))
    }
}

/// Observed track of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHistory {
    pub id: u32,
    pub positions: Vec<Point>,
    pub mask: Vec<bool>,
}

impl AgentHistory {
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != HISTORY_LEN || self.mask.len() != HISTORY_LEN {
            bail!(
                Input,
                "agent {} history has {} positions / {} mask entries, expected {HISTORY_LEN}",
                self.id,
                self.positions.len(),
                self.mask.len()
            );
        }
        if self.positions.iter().zip(&self.mask).any(|(p, &m)| m && !(p[0].is_finite() && p[1].is_finite())) {
            bail!(Input, "agent {} has non-finite valid positions", self.id);
        }
        Ok(())
    }

    pub fn last_valid(&self) -> Option<Point> {
        self.positions.iter().zip(&self.mask).rev().find(|(_, &m)| m).map(|(p, _)| *p)
    }
}

/// One traffic scene in the focal agent's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub lanes: Vec<LanePolyline>,
    pub drivable: DrivableArea,
    /// Focal agent first.
    pub agents: Vec<AgentHistory>,
    pub future: Vec<Point>,
    pub label: Behavior,
    pub is_intersection: bool,
}

impl Scenario {
    pub fn focal(&self) -> &AgentHistory {
        &self.agents[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            bail!(Input, "scenario {} has no agents", self.id);
        }
        for a in &self.agents {
            a.validate()?;
        }
        for l in &self.lanes {
            l.validate(self.lanes.len())?;
        }
        self.drivable.validate()?;
        if self.future.len() != FUTURE_LEN {
            bail!(Input, "future has {} points, expected {FUTURE_LEN}", self.future.len());
        }
        Ok(())
    }

    /// Applies `p -> R(angle) p + offset` to every coordinate.
    pub fn rigid_transform(&self, angle: f64, offset: Point) -> Scenario {
        let f = geometry::Frame::new(angle, offset);
        self.map_points(|p| f.apply(p))
    }

    /// Re-expresses the scene with `origin` at zero and `heading` along +x.
    pub fn renormalized(&self, origin: Point, heading: f64) -> Scenario {
        let f = geometry::Frame::new(0.0, [-origin[0], -origin[1]]);
        let r = geometry::Frame::new(-heading, [0.0, 0.0]);
        self.map_points(|p| r.apply(f.apply(p)))
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Scenario {
        let mut out = self.clone();
        for lane in &mut out.lanes {
            lane.points.iter_mut().for_each(|p| *p = f(*p));
        }
        for poly in &mut out.drivable.polygons {
            poly.iter_mut().for_each(|p| *p = f(*p));
        }
        for a in &mut out.agents {
            a.positions.iter_mut().for_each(|p| *p = f(*p));
        }
        out.future.iter_mut().for_each(|p| *p = f(*p));
        out
    }

    pub fn label_index(&self) -> usize {
        self.label.index()
    }
}

/// Parameters of the synthetic scenario generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_scenarios: usize,
    /// Probabilities of (straight, left, right).
    pub class_mix: [f64; 3],
    /// Probability that a straight-driving scene is placed at an
    /// intersection; turning scenes always are.
    pub intersection_fraction: f64,
    /// Inclusive range of non-focal agents.
    pub n_other_agents: [usize; 2],
    /// Focal speed range in m/s.
    pub speed_range: [f64; 2],
    /// Bound on the focal agent's future longitudinal acceleration (m/s²).
    pub accel_max: f64,
    pub rng_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_scenarios: 1000,
            class_mix: [0.817, 0.095, 0.088],
            intersection_fraction: 0.3,
            n_other_agents: [2, 6],
            speed_range: [5.0, 15.0],
            accel_max: 1.0,
            rng_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            bail!(Config, "class_mix must be non-negative and sum to 1, got {:?}", self.class_mix);
        }
        if !(0.0..=1.0).contains(&self.intersection_fraction) {
            bail!(Config, "intersection_fraction must lie in [0, 1], got {}", self.intersection_fraction);
        }
        if self.n_other_agents[0] > self.n_other_agents[1] {
            bail!(Config, "n_other_agents range is reversed: {:?}", self.n_other_agents);
        }
        let [lo, hi] = self.speed_range;
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            bail!(Config, "speed_range must satisfy 0 < min <= max, got {:?}", self.speed_range);
        }
        if !(self.accel_max >= 0.0) || !self.accel_max.is_finite() {
            bail!(Config, "accel_max must be a non-negative number, got {}", self.accel_max);
        }
        Ok(())
    }
}

/// Human-readable list of scenario ids, for error messages.
pub fn describe_ids(scenarios: &[Scenario]) -> String {
    let ids: Vec<&str> = scenarios.iter().take(3).map(|s| s.id.as_str()).collect();
    format!("{ids:?}{}", if scenarios.len() > 3 { "..." } else { "" })
}
