//! Procedural road scenes: a single straight road or a three-way fork
//! (straight, left arc, right arc) with the focal vehicle following one
//! branch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::{detect_intersection, Frame};
use super::label::label_behavior;
use super::types::*;
use crate::error::{bail, Result};

pub const LANE_WIDTH: f64 = 3.5;
/// Lateral offset of a travel lane from the road centerline.
pub const LANE_OFFSET: f64 = 1.75;
pub const ROAD_HALF_WIDTH: f64 = 4.0;
const SEGMENT_LEN: f64 = 30.0;
const POINTS_PER_SEGMENT: usize = 7;
/// Length of the straight connector across the junction.
const JUNCTION_LEN: f64 = 12.0;
const ARC_POLYGON_STEPS: usize = 16;
const MAX_ATTEMPTS: usize = 64;
const MASK_PROB: f64 = 0.3;
const OTHER_SPEED_MAX: f64 = 12.0;

/// Deterministic per-scenario stream derived from `(seed, index)`.
pub fn scenario_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn scenario_id(seed: u64, index: u64) -> alloc::string::String {
    format!("scn-{seed}-{index:06}")
}

/// Generates scenario `index` of the dataset described by `cfg`.
pub fn generate_scenario(cfg: &DatasetConfig, index: u64) -> Result<Scenario> {
    let mut rng = scenario_rng(cfg.rng_seed, index);
    generate_scenario_with_rng(cfg, scenario_id(cfg.rng_seed, index), &mut rng)
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Scenario>> {
    cfg.validate()?;
    (0..cfg.n_scenarios as u64).map(|i| generate_scenario(cfg, i)).collect()
}

pub fn generate_scenario_with_rng<R: Rng + ?Sized>(
    cfg: &DatasetConfig,
    id: alloc::string::String,
    rng: &mut R,
) -> Result<Scenario> {
    cfg.validate()?;
    let u: f64 = rng.random();
    let label = if u < cfg.class_mix[0] {
        Behavior::Straight
    } else if u < cfg.class_mix[0] + cfg.class_mix[1] {
        Behavior::Left
    } else {
        Behavior::Right
    };
    let at_junction = label != Behavior::Straight || rng.random::<f64>() < cfg.intersection_fraction;
    for _ in 0..MAX_ATTEMPTS {
        let s = sample_scene(cfg, &id, label, at_junction, rng);
        let compliant = s.future.iter().all(|&p| s.drivable.contains(p));
        if compliant && label_behavior(&s.future) == label && detect_intersection(&s.lanes) == at_junction {
            return Ok(s);
        }
    }
    bail!(Numeric, "scenario {id}: no valid sample after {MAX_ATTEMPTS} attempts")
}

/// Centerline of the focal vehicle's route, parameterized by arc length with
/// s = 0 at the junction entry node `(0, -LANE_OFFSET)`.
#[derive(Debug, Clone, Copy)]
struct Route {
    /// +1 left, -1 right, 0 straight.
    sign: f64,
    radius: f64,
    sweep: f64,
    /// Lateral swerve toward the turn side on the approach, ending before
    /// the junction entry.
    drift: Drift,
}

/// Raised-cosine lateral offset `amp · sin²(π (s - start) / len)` on
/// `[start, start + len]`, zero elsewhere.
#[derive(Debug, Clone, Copy)]
struct Drift {
    start: f64,
    len: f64,
    amp: f64,
}

impl Drift {
    const NONE: Drift = Drift { start: 0.0, len: 1.0, amp: 0.0 };

    fn offset_and_slope(&self, s: f64) -> (f64, f64) {
        let u = (s - self.start) / self.len;
        if self.amp == 0.0 || !(0.0..=1.0).contains(&u) {
            return (0.0, 0.0);
        }
        let w = PI * u;
        (self.amp * w.sin().powi(2), self.amp * PI / self.len * (2.0 * w).sin())
    }
}

impl Route {
    fn arc_len(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.radius * self.sweep
        }
    }

    fn pose(&self, s: f64) -> (Point, f64) {
        if s <= 0.0 {
            let (d, slope) = self.drift.offset_and_slope(s);
            return ([s, -LANE_OFFSET + d], slope.atan());
        }
        let l = self.arc_len();
        let on_arc = |phi: f64| {
            (
                [self.radius * phi.sin(), -LANE_OFFSET + self.sign * self.radius * (1.0 - phi.cos())],
                self.sign * phi,
            )
        };
        if s <= l {
            return on_arc(s / self.radius);
        }
        let (end, h) = if l > 0.0 { on_arc(self.sweep) } else { ([0.0, -LANE_OFFSET], 0.0) };
        let d = s - l;
        ([end[0] + d * h.cos(), end[1] + d * h.sin()], h)
    }
}

fn offset_point(p: Point, heading: f64, along: f64, lateral: f64) -> Point {
    let (s, c) = heading.sin_cos();
    [p[0] + along * c - lateral * s, p[1] + along * s + lateral * c]
}

fn line_points(start: Point, heading: f64, len: f64) -> Vec<Point> {
    (0..POINTS_PER_SEGMENT)
        .map(|i| offset_point(start, heading, len * i as f64 / (POINTS_PER_SEGMENT - 1) as f64, 0.0))
        .collect()
}

/// Rectangle in a pose frame: `along ∈ [a0, a1]`, `lateral ∈ [l0, l1]`.
fn rect(origin: Point, heading: f64, a0: f64, a1: f64, l0: f64, l1: f64) -> Vec<Point> {
    vec![
        offset_point(origin, heading, a0, l0),
        offset_point(origin, heading, a1, l0),
        offset_point(origin, heading, a1, l1),
        offset_point(origin, heading, a0, l1),
    ]
}

struct MapBuilder {
    lanes: Vec<LanePolyline>,
    polygons: Vec<Vec<Point>>,
}

impl MapBuilder {
    fn push(&mut self, points: Vec<Point>) -> usize {
        self.lanes.push(LanePolyline { points, successors: Vec::new(), width: LANE_WIDTH });
        self.lanes.len() - 1
    }

    /// Lane chain of `len` meters from `start` split into ~30 m segments.
    /// Returns the indices of the first and last segment.
    fn chain(&mut self, start: Point, heading: f64, len: f64) -> (usize, usize) {
        let n = (len / SEGMENT_LEN).ceil().max(1.0) as usize;
        let seg = len / n as f64;
        let mut first = usize::MAX;
        let mut prev: Option<usize> = None;
        for k in 0..n {
            let idx = self.push(line_points(offset_point(start, heading, seg * k as f64, 0.0), heading, seg));
            if let Some(p) = prev {
                self.lanes[p].successors.push(idx);
            } else {
                first = idx;
            }
            prev = Some(idx);
        }
        (first, prev.unwrap_or(first))
    }

    /// Two-way road leaving `start` (the right-hand lane's start) along
    /// `heading`; the opposing lane returns toward `start`.
    fn exit_arm(&mut self, start: Point, heading: f64, len: f64) -> usize {
        let (first, _) = self.chain(start, heading, len);
        let back_start = offset_point(start, heading, len, 2.0 * LANE_OFFSET);
        self.chain(back_start, heading + PI, len);
        first
    }
}

/// Drivable band around an arc route, in the same lateral convention as
/// the straight roads.
fn arc_band(route: &Route) -> Vec<Point> {
    let (l_right, l_left) = (LANE_OFFSET - ROAD_HALF_WIDTH, LANE_OFFSET + ROAD_HALF_WIDTH);
    let poses: Vec<(Point, f64)> =
        (0..=ARC_POLYGON_STEPS).map(|i| route.pose(route.arc_len() * i as f64 / ARC_POLYGON_STEPS as f64)).collect();
    let mut poly: Vec<Point> = poses.iter().map(|&(p, h)| offset_point(p, h, 0.0, l_right)).collect();
    poly.extend(poses.iter().rev().map(|&(p, h)| offset_point(p, h, 0.0, l_left)));
    poly
}

fn connector_points(route: &Route) -> Vec<Point> {
    let l = if route.sign == 0.0 { JUNCTION_LEN } else { route.arc_len() };
    (0..POINTS_PER_SEGMENT).map(|i| route.pose(l * i as f64 / (POINTS_PER_SEGMENT - 1) as f64).0).collect()
}

fn random_route<R: Rng + ?Sized>(rng: &mut R, behavior: Behavior) -> Route {
    let sweep = rng.random_range(70.0..110.0f64).to_radians();
    match behavior {
        Behavior::Straight => Route { sign: 0.0, radius: 0.0, sweep: 0.0, drift: Drift::NONE },
        Behavior::Left => Route { sign: 1.0, radius: rng.random_range(9.0..14.0), sweep, drift: Drift::NONE },
        Behavior::Right => Route { sign: -1.0, radius: rng.random_range(6.0..10.0), sweep, drift: Drift::NONE },
    }
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6 + 0.0
}

fn sample_scene<R: Rng + ?Sized>(
    cfg: &DatasetConfig,
    id: &str,
    label: Behavior,
    at_junction: bool,
    rng: &mut R,
) -> Scenario {
    let [v_lo, v_hi] = cfg.speed_range;
    let speed = if v_hi > v_lo { rng.random_range(v_lo..=v_hi) } else { v_lo };
    let horizon = FUTURE_LEN as f64 * DT;
    let a_floor = ((1.0_f64.min(speed) - speed) / horizon).max(-cfg.accel_max);
    let accel = if cfg.accel_max > 0.0 { rng.random_range(a_floor..=cfg.accel_max) } else { 0.0 };
    let back = v_hi * DT * (HISTORY_LEN - 1) as f64 + 25.0;
    let ahead = v_hi * horizon + 0.5 * cfg.accel_max * horizon * horizon + 25.0;

    let mut map = MapBuilder { lanes: Vec::new(), polygons: Vec::new() };
    let route;
    let s_obs;
    if at_junction {
        let routes = [
            random_route(rng, Behavior::Straight),
            random_route(rng, Behavior::Left),
            random_route(rng, Behavior::Right),
        ];
        // Every junction agent is observed on the approach, so all three
        // branches stay reachable; turners are swerving toward their side.
        let mut r = routes[label.index()];
        s_obs = if label == Behavior::Straight {
            rng.random_range(-17.0..-6.0)
        } else {
            let len = rng.random_range(12.0..18.0);
            let start = -1.0 - len - rng.random_range(0.0..2.0);
            r.drift = Drift { start, len, amp: r.sign * rng.random_range(0.5..1.0) };
            start + len * rng.random_range(0.2..0.4)
        };
        route = r;
        let approach_len = (back - s_obs.min(0.0)).max(SEGMENT_LEN);
        let (_, last) = map.chain([-approach_len, -LANE_OFFSET], 0.0, approach_len);
        map.chain([0.0, LANE_OFFSET], PI, approach_len);
        map.polygons.push(rect([0.0, 0.0], 0.0, -approach_len - 0.5, 0.5, -ROAD_HALF_WIDTH, ROAD_HALF_WIDTH));
        let exit_len = ahead;
        for r in &routes {
            let conn = map.push(connector_points(r));
            map.lanes[last].successors.push(conn);
            let (start, heading) = if r.sign == 0.0 { ([JUNCTION_LEN, -LANE_OFFSET], 0.0) } else { r.pose(r.arc_len()) };
            if r.sign == 0.0 {
                // the straight arm's polygon also covers the junction box
                map.polygons.push(rect([0.0, 0.0], 0.0, -0.5, JUNCTION_LEN + exit_len, -ROAD_HALF_WIDTH, ROAD_HALF_WIDTH));
            } else {
                map.polygons.push(arc_band(r));
                map.polygons.push(rect(start, heading, -0.5, exit_len, LANE_OFFSET - ROAD_HALF_WIDTH, LANE_OFFSET + ROAD_HALF_WIDTH));
            }
            let first = map.exit_arm(start, heading, exit_len);
            map.lanes[conn].successors.push(first);
        }
    } else {
        route = Route { sign: 0.0, radius: 0.0, sweep: 0.0, drift: Drift::NONE };
        s_obs = rng.random_range(-20.0..20.0);
        let phase = rng.random_range(0.0..SEGMENT_LEN);
        let x0 = s_obs - back - phase;
        let len = back + phase + ahead + 20.0;
        map.chain([x0, -LANE_OFFSET], 0.0, len);
        map.chain([x0 + len, LANE_OFFSET], PI, len);
        map.polygons.push(rect([0.0, 0.0], 0.0, x0 - 0.5, x0 + len + 0.5, -ROAD_HALF_WIDTH, ROAD_HALF_WIDTH));
    }

    let focal_positions: Vec<Point> =
        (0..HISTORY_LEN).map(|i| route.pose(s_obs - speed * DT * (HISTORY_LEN - 1 - i) as f64).0).collect();
    let future_world: Vec<Point> = (1..=FUTURE_LEN)
        .map(|k| {
            let t = DT * k as f64;
            route.pose(s_obs + speed * t + 0.5 * accel * t * t).0
        })
        .collect();

    let n_lo = cfg.n_other_agents[0];
    let n_hi = cfg.n_other_agents[1];
    let n_other = if n_hi > n_lo { rng.random_range(n_lo..=n_hi) } else { n_lo };
    let mut agents = vec![AgentHistory { id: 0, positions: focal_positions, mask: vec![true; HISTORY_LEN] }];
    for k in 0..n_other {
        let lane = &map.lanes[rng.random_range(0..map.lanes.len())];
        let seg = rng.random_range(0..lane.points.len() - 1);
        let (a, b) = (lane.points[seg], lane.points[seg + 1]);
        let t: f64 = rng.random();
        let pos = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        let v = rng.random_range(0.0..OTHER_SPEED_MAX);
        let hidden = if rng.random::<f64>() < MASK_PROB { rng.random_range(1..=40) } else { 0 };
        let mut positions = Vec::with_capacity(HISTORY_LEN);
        let mut mask = Vec::with_capacity(HISTORY_LEN);
        for i in 0..HISTORY_LEN {
            if i < hidden {
                positions.push([0.0, 0.0]);
                mask.push(false);
            } else {
                positions.push(offset_point(pos, heading, -v * DT * (HISTORY_LEN - 1 - i) as f64, 0.0));
                mask.push(true);
            }
        }
        agents.push(AgentHistory { id: k as u32 + 1, positions, mask });
    }

    let (origin, heading) = route.pose(s_obs);
    let frame = Frame::to_local(origin, heading);
    let to_local = |p: Point| {
        let q = frame.apply(p);
        [quantize(q[0]), quantize(q[1])]
    };
    for a in &mut agents {
        for (p, &m) in a.positions.iter_mut().zip(&a.mask) {
            if m {
                *p = to_local(*p);
            }
        }
    }
    for lane in &mut map.lanes {
        lane.points.iter_mut().for_each(|p| *p = to_local(*p));
    }
    for poly in &mut map.polygons {
        poly.iter_mut().for_each(|p| *p = to_local(*p));
    }
    Scenario {
        id: id.into(),
        lanes: map.lanes,
        drivable: DrivableArea { polygons: map.polygons },
        agents,
        future: future_world.into_iter().map(to_local).collect(),
        label,
        is_intersection: at_junction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::geometry::validate_polygon;

    #[test]
    fn degenerate_mix_is_straight() {
        let cfg = DatasetConfig { n_scenarios: 50, class_mix: [1.0, 0.0, 0.0], ..Default::default() };
        for s in generate_dataset(&cfg).unwrap() {
            assert_eq!(s.label, Behavior::Straight);
            assert!(crate::scene::label::net_heading_change(&s.future).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_unnormalized_mix() {
        let cfg = DatasetConfig { class_mix: [0.5, 0.2, 0.2], ..Default::default() };
        assert!(matches!(generate_scenario(&cfg, 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn deterministic_per_index() {
        let cfg = DatasetConfig::default();
        assert_eq!(generate_scenario(&cfg, 7).unwrap(), generate_scenario(&cfg, 7).unwrap());
        assert_ne!(generate_scenario(&cfg, 7).unwrap(), generate_scenario(&cfg, 8).unwrap());
    }

    #[test]
    fn scenes_are_well_formed() {
        let cfg = DatasetConfig { n_scenarios: 200, class_mix: [0.4, 0.3, 0.3], ..Default::default() };
        for s in generate_dataset(&cfg).unwrap() {
            s.validate().unwrap();
            for poly in &s.drivable.polygons {
                validate_polygon(poly).unwrap();
            }
            let last = s.focal().positions[HISTORY_LEN - 1];
            assert_eq!(last, [0.0, 0.0]);
            let prev = s.focal().positions[HISTORY_LEN - 2];
            assert!(prev[0] < 0.0 && prev[1].abs() < 0.1 * prev[0].abs(), "{} heading not +x: {prev:?}", s.id);
            assert_eq!(label_behavior(&s.future), s.label);
            assert!(s.future.iter().all(|&p| s.drivable.contains(p)));
            assert!(s.focal().positions.iter().all(|&p| s.drivable.contains(p)));
            assert_eq!(detect_intersection(&s.lanes), s.is_intersection);
            if s.label != Behavior::Straight {
                assert!(s.is_intersection);
            }
        }
    }
}
