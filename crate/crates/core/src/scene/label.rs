#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::geometry::wrap_angle;
use super::types::{Behavior, Point};

/// Net heading change (degrees) separating turns from straight driving.
pub const TURN_THRESHOLD_DEG: f64 = 15.0;

/// Segments shorter than this carry no heading information.
const MIN_SEGMENT: f64 = 1e-6;

/// Net signed heading change along a polyline in radians, summing wrapped
/// per-segment deltas so that U-turns accumulate past ±π.
pub fn net_heading_change(path: &[Point]) -> f64 {
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    for w in path.windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        if dx.hypot(dy) < MIN_SEGMENT {
            continue;
        }
        let h = dy.atan2(dx);
        if let Some(p) = prev {
            total += wrap_angle(h - p);
        }
        prev = Some(h);
    }
    total
}

/// Behavior class of a future trajectory. Standing still counts as straight.
pub fn label_behavior(future: &[Point]) -> Behavior {
    let theta = net_heading_change(future).to_degrees();
    if theta > TURN_THRESHOLD_DEG {
        Behavior::Left
    } else if theta < -TURN_THRESHOLD_DEG {
        Behavior::Right
    } else {
        Behavior::Straight
    }
}
