use alloc::format;
use alloc::string::String;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::types::{LanePolyline, Point};

/// Tolerance for the on-boundary test of [`point_in_polygon`].
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Rotation by `angle` followed by translation by `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    cos: f64,
    sin: f64,
    offset: Point,
}

impl Frame {
    pub fn new(angle: f64, offset: Point) -> Self {
        Self { cos: angle.cos(), sin: angle.sin(), offset }
    }

    /// Frame that maps world coordinates into the local frame of a pose.
    pub fn to_local(origin: Point, heading: f64) -> Self {
        let (s, c) = heading.sin_cos();
        // R(-h) (p - o) = R(-h) p - R(-h) o
        let ox = c * origin[0] + s * origin[1];
        let oy = -s * origin[0] + c * origin[1];
        Self { cos: c, sin: -s, offset: [-ox, -oy] }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        [
            self.cos * p[0] - self.sin * p[1] + self.offset[0],
            self.sin * p[0] + self.cos * p[1] + self.offset[1],
        ]
    }
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance from `p` to the closed segment `ab`.
pub fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Twice the signed area; positive for counter-clockwise vertex order.
pub fn signed_area2(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    })
    .sum()
}

/// Inside or on the boundary of a simple polygon (even-odd rule).
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[j], poly[i]);
        if dist_to_segment(p, a, b) <= BOUNDARY_EPS {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point, q: Point, r: Point| {
        r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    (d1 == 0.0 && on(c, d, a)) || (d2 == 0.0 && on(c, d, b)) || (d3 == 0.0 && on(a, b, c)) || (d4 == 0.0 && on(a, b, d))
}

/// Checks vertex count, finiteness, simplicity and counter-clockwise order.
pub fn validate_polygon(poly: &[Point]) -> Result<(), String> {
    let n = poly.len();
    if n < 3 {
        return Err(format!("{n} vertices, need at least 3"));
    }
    if poly.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite vertex".into());
    }
    for i in 0..n {
        for j in i + 1..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Err(format!("edges {i} and {j} intersect"));
            }
        }
    }
    if !(signed_area2(poly) > 0.0) {
        return Err("vertices are not counter-clockwise".into());
    }
    Ok(())
}

/// Radius within which a lane junction marks a scene as an intersection.
pub const INTERSECTION_RADIUS: f64 = 15.0;

/// True iff some lane end node within [`INTERSECTION_RADIUS`] of the origin
/// joins three or more lane branches.
///
/// A node's degree counts the lane ending there, its successors, and any
/// other lane that merges into one of those successors.
pub fn detect_intersection(lanes: &[LanePolyline]) -> bool {
    lanes.iter().enumerate().any(|(i, lane)| {
        let Some(&end) = lane.points.last() else { return false };
        if end[0].hypot(end[1]) > INTERSECTION_RADIUS || lane.successors.is_empty() {
            return false;
        }
        let merging = lanes
            .iter()
            .enumerate()
            .filter(|&(j, other)| j != i && other.successors.iter().any(|s| lane.successors.contains(s)))
            .count();
        1 + lane.successors.len() + merging >= 3
    })
}

/// Normalizes an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -core::f64::consts::PI {
        w += two_pi;
    } else if w > core::f64::consts::PI {
        w -= two_pi;
    }
    w
}
