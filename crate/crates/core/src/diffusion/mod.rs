//! Conditional denoising diffusion over normalized future trajectories.

pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod token;

use alloc::vec::Vec;

pub use denoiser::{Denoiser, DenoiserOutput, SampleConditions};
pub use sampler::{sample, PredictionSet, SamplingMode, DEFAULT_SIGMA_EP};
pub use schedule::{NoiseSchedule, ScheduleKind};
pub use token::{behavior_tokens, endpoint_source, BehaviorToken};

use crate::scene::Point;

/// Flattens a trajectory into normalized `[x0, y0, x1, y1, ...]`.
pub fn normalize(traj: &[Point], scale: f64) -> Vec<f64> {
    traj.iter().flat_map(|p| [p[0] / scale, p[1] / scale]).collect()
}

pub fn denormalize(values: &[f64], scale: f64) -> Vec<Point> {
    values.chunks(2).map(|p| [p[0] * scale, p[1] * scale]).collect()
}
