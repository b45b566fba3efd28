//! Synthetic driving scenes, behavior labels and drivable-area geometry.

pub mod generate;
pub mod geometry;
pub mod label;
mod types;

pub use generate::{generate_dataset, generate_scenario, generate_scenario_with_rng, scenario_rng};
pub use geometry::{detect_intersection, point_in_polygon};
pub use label::label_behavior;
pub use types::*;

/// True iff `p` lies inside or on the boundary of any drivable polygon.
pub fn point_in_drivable(p: Point, d: &DrivableArea) -> bool {
    d.contains(p)
}
