use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::ndiff::Tensor;
use crate::scene::{Behavior, Point, Scenario};

/// Width of the raw token feature vector fed to the token MLP.
pub const TOKEN_FEATURES: usize = 7;

/// Condition that steers generation toward a behavior or an endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorToken {
    None,
    Mode(Behavior),
    /// Final position in the focal frame, meters.
    Endpoint(Point),
}

impl BehaviorToken {
    /// One-hot mode slots, a none flag, an endpoint flag and the endpoint
    /// coordinates divided by `scale`.
    pub fn features(&self, scale: f64) -> [f64; TOKEN_FEATURES] {
        let mut f = [0.0; TOKEN_FEATURES];
        match *self {
            BehaviorToken::Mode(b) => f[b.index()] = 1.0,
            BehaviorToken::None => f[3] = 1.0,
            BehaviorToken::Endpoint(p) => {
                f[4] = 1.0;
                f[5] = p[0] / scale;
                f[6] = p[1] / scale;
            }
        }
        f
    }

    pub fn mode(&self) -> Option<Behavior> {
        match *self {
            BehaviorToken::Mode(b) => Some(b),
            _ => None,
        }
    }
}

pub fn token_matrix(tokens: &[BehaviorToken], scale: f64) -> Tensor {
    Tensor::from_fn(tokens.len(), TOKEN_FEATURES, |r, c| tokens[r].features(scale)[c])
}

/// Sinusoidal embedding of a diffusion step, one row per entry of `steps`.
///
/// Frequencies follow the usual geometric ladder from 1 down to 1/10000 so
/// that distinct integer steps map to distinct rows.
pub fn step_sinusoid(steps: &[usize], width: usize) -> Tensor {
    let half = width / 2;
    Tensor::from_fn(steps.len(), width, |r, c| {
        let i = if c < half { c } else { c - half };
        let freq = if half > 1 { (-(10000f64.ln()) * i as f64 / (half - 1) as f64).exp() } else { 1.0 };
        let a = steps[r] as f64 * freq;
        if c < half {
            a.sin()
        } else if c < 2 * half {
            a.cos()
        } else {
            0.0
        }
    })
}

/// Fixed sinusoidal encoding of trajectory time index, `len × width`.
pub fn temporal_encoding(len: usize, width: usize) -> Tensor {
    let steps: Vec<usize> = (0..len).collect();
    step_sinusoid(&steps, width)
}

/// Emulated external endpoint predictor: ground-truth final position plus
/// isotropic Gaussian noise of standard deviation `sigma_ep` meters.
pub fn endpoint_source<R: Rng + ?Sized>(scenario: &Scenario, sigma_ep: f64, rng: &mut R) -> Result<Point> {
    let Some(&end) = scenario.future.last() else {
        bail!(Input, "scenario {} has no ground-truth future", scenario.id);
    };
    if sigma_ep == 0.0 {
        return Ok(end);
    }
    let normal = match Normal::new(0.0, sigma_ep) {
        Ok(n) => n,
        Err(_) => bail!(Config, "sigma_ep must be a non-negative number, got {sigma_ep}"),
    };
    Ok([end[0] + normal.sample(rng), end[1] + normal.sample(rng)])
}

/// Token multiset used by behavior-controlled sampling.
///
/// At intersections the K slots cycle through left, straight and right in
/// equal blocks (2 each for K = 6); elsewhere every slot takes `argmax`.
pub fn behavior_tokens(is_intersection: bool, argmax: Behavior, k: usize) -> Vec<BehaviorToken> {
    const ORDER: [Behavior; 3] = [Behavior::Left, Behavior::Straight, Behavior::Right];
    (0..k)
        .map(|i| BehaviorToken::Mode(if is_intersection { ORDER[i * 3 / k] } else { argmax }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_slots_at_intersection() {
        let t = behavior_tokens(true, Behavior::Straight, 6);
        for b in Behavior::ALL {
            assert_eq!(t.iter().filter(|x| x.mode() == Some(b)).count(), 2);
        }
        let t = behavior_tokens(false, Behavior::Right, 6);
        assert!(t.iter().all(|x| x.mode() == Some(Behavior::Right)));
    }

    #[test]
    fn step_embedding_is_injective() {
        let steps: Vec<usize> = (0..=100).collect();
        let e = step_sinusoid(&steps, 16);
        for i in 0..steps.len() {
            for j in i + 1..steps.len() {
                let d: f64 = e.row(i).iter().zip(e.row(j)).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-6, "steps {i} and {j} collide");
            }
        }
    }

    #[test]
    fn token_features_are_exclusive() {
        assert_eq!(BehaviorToken::None.features(30.0), [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(BehaviorToken::Mode(Behavior::Left).features(30.0)[1], 1.0);
        let f = BehaviorToken::Endpoint([30.0, -15.0]).features(30.0);
        assert_eq!(&f[4..], &[1.0, 1.0, -0.5]);
    }
}
