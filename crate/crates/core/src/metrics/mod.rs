//! Multimodal forecasting metrics over K sampled trajectories.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scene::{DrivableArea, Point};

/// Final-step error above which a prediction counts as a miss.
pub const MISS_THRESHOLD: f64 = 2.0;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_pair(a: &[Point], b: &[Point]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        bail!(Input, "trajectory lengths {} and {} do not match", a.len(), b.len());
    }
    Ok(())
}

/// Mean per-step L2 distance.
pub fn ade(a: &[Point], b: &[Point]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(&p, &q)| dist(p, q)).sum::<f64>() / a.len() as f64)
}

/// Final-step L2 distance.
pub fn fde(a: &[Point], b: &[Point]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(dist(a[a.len() - 1], b[b.len() - 1]))
}

fn min_over<T: AsRef<[Point]>>(samples: &[T], gt: &[Point], f: fn(&[Point], &[Point]) -> Result<f64>) -> Result<f64> {
    if samples.is_empty() {
        bail!(Input, "need at least one sample");
    }
    let mut best = f64::INFINITY;
    for s in samples {
        best = best.min(f(s.as_ref(), gt)?);
    }
    Ok(best)
}

pub fn min_ade<T: AsRef<[Point]>>(samples: &[T], gt: &[Point]) -> Result<f64> {
    min_over(samples, gt, ade)
}

pub fn min_fde<T: AsRef<[Point]>>(samples: &[T], gt: &[Point]) -> Result<f64> {
    min_over(samples, gt, fde)
}

/// True iff the best final-step error strictly exceeds `threshold`.
pub fn is_miss<T: AsRef<[Point]>>(samples: &[T], gt: &[Point], threshold: f64) -> Result<bool> {
    Ok(min_fde(samples, gt)? > threshold)
}

fn pairwise<T: AsRef<[Point]>>(samples: &[T], f: fn(&[Point], &[Point]) -> Result<f64>) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        bail!(Input, "pairwise diversity needs at least 2 samples, got {k}");
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += f(samples[i].as_ref(), samples[j].as_ref())?;
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// Mean pairwise ADE over all unordered sample pairs.
pub fn asd<T: AsRef<[Point]>>(samples: &[T]) -> Result<f64> {
    pairwise(samples, ade)
}

/// Mean pairwise FDE over all unordered sample pairs.
pub fn fsd<T: AsRef<[Point]>>(samples: &[T]) -> Result<f64> {
    pairwise(samples, fde)
}

/// Fraction of samples whose every point is drivable.
pub fn ecfl<T: AsRef<[Point]>>(samples: &[T], drivable: &DrivableArea) -> Result<f64> {
    if samples.is_empty() {
        bail!(Input, "need at least one sample");
    }
    if drivable.polygons.is_empty() {
        bail!(Config, "drivable area is empty");
    }
    let inside = samples.iter().filter(|s| s.as_ref().iter().all(|&p| drivable.contains(p))).count();
    Ok(inside as f64 / samples.len() as f64)
}

/// Metrics of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    /// 1.0 for a miss, 0.0 for a hit.
    pub miss: f64,
    pub asd: f64,
    pub fsd: f64,
    pub ecfl: f64,
}

pub fn score<T: AsRef<[Point]>>(samples: &[T], gt: &[Point], drivable: &DrivableArea) -> Result<ScenarioMetrics> {
    Ok(ScenarioMetrics {
        min_ade: min_ade(samples, gt)?,
        min_fde: min_fde(samples, gt)?,
        miss: if is_miss(samples, gt, MISS_THRESHOLD)? { 1.0 } else { 0.0 },
        asd: asd(samples)?,
        fsd: fsd(samples)?,
        ecfl: ecfl(samples, drivable)?,
    })
}

/// Dataset-level means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub n: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub asd: f64,
    pub fsd: f64,
    pub ecfl: f64,
}

impl MetricsReport {
    /// `(name, value)` rows in report order.
    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("min_ade", self.min_ade),
            ("min_fde", self.min_fde),
            ("miss_rate", self.miss_rate),
            ("asd", self.asd),
            ("fsd", self.fsd),
            ("ecfl", self.ecfl),
        ]
    }
}

/// Unweighted mean over scenarios.
pub fn aggregate(per_scenario: &[ScenarioMetrics], k: usize) -> Result<MetricsReport> {
    if per_scenario.is_empty() {
        bail!(Input, "cannot aggregate an empty metric set");
    }
    let n = per_scenario.len();
    let mean = |f: fn(&ScenarioMetrics) -> f64| per_scenario.iter().map(f).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        k,
        n,
        min_ade: mean(|m| m.min_ade),
        min_fde: mean(|m| m.min_fde),
        miss_rate: mean(|m| m.miss),
        asd: mean(|m| m.asd),
        fsd: mean(|m| m.fsd),
        ecfl: mean(|m| m.ecfl),
    })
}

/// Convenience for callers that hold samples as `Vec<Vec<Point>>`.
pub fn as_slices(samples: &[Vec<Point>]) -> Vec<&[Point]> {
    samples.iter().map(|s| s.as_slice()).collect()
}
