//! Mode classifier and confidence decoder.

use alloc::vec::Vec;
use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoded;
use crate::error::{bail, Result};
use crate::metrics::ade;
use crate::ndiff::{Activation, Graph, LayerNorm, Mlp, MultiHeadAttention, ParamStore, Var};
use crate::scene::{Behavior, Point};

/// Decay length (meters) of the confidence target.
pub const CONF_TAU: f64 = 2.0;
/// Floor applied inside the logarithm of the class loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Probabilities of (straight, left, right).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeProbs(pub [f64; 3]);

impl ModeProbs {
    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Self([e[0] / z, e[1] / z, e[2] / z])
    }

    pub fn prob(&self, b: Behavior) -> f64 {
        self.0[b.index()]
    }

    /// Most likely mode; ties go to the lower class index.
    pub fn argmax(&self) -> Behavior {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Behavior::ALL[best]
    }
}

/// `−log max(p_y, 1e-12)`.
pub fn class_loss(p: &ModeProbs, label: Behavior) -> f64 {
    -p.prob(label).max(LOG_FLOOR).ln()
}

/// `exp(−ADE/τ)` between an estimated and the true trajectory, meters.
pub fn confidence_target(estimated: &[Point], gt: &[Point]) -> Result<f64> {
    Ok((-ade(estimated, gt)? / CONF_TAU).exp())
}

/// Classifier probability of the chosen mode times the decoder score.
pub fn final_score(class_prob: f64, decoder_score: f64) -> f64 {
    (class_prob * decoder_score).clamp(0.0, 1.0)
}

/// Agent self-attention, then the focal token joined with its pre-fusion
/// history state, then an MLP to three logits.
#[derive(Debug, Clone)]
pub struct ModeClassifier {
    attn: MultiHeadAttention,
    norm: LayerNorm,
    mlp: Mlp,
}

impl ModeClassifier {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, "cls.attn", width, heads, rng)?,
            norm: LayerNorm::new(store, "cls.norm", width),
            mlp: Mlp::new(store, "cls.mlp", &[2 * width, width, 3], Activation::Gelu, rng),
        })
    }

    /// Logits, `batch × 3`.
    pub fn forward(&self, g: &mut Graph<'_>, enc: &Encoded) -> Result<Var> {
        let a = self.attn.forward(g, enc.agents, enc.agents, enc.agent_segs.clone(), enc.agent_segs.clone())?;
        let x = g.add(enc.agents, a)?;
        let x = self.norm.forward(g, x)?;
        let focal = g.gather_rows(x, enc.agent_segs.iter().map(|r| r.start).collect())?;
        let joined = g.concat_cols(&[focal, enc.focal_history])?;
        self.mlp.forward(g, joined)
    }
}

/// Scores a sample from pooled final denoiser features.
#[derive(Debug, Clone)]
pub struct ConfidenceDecoder {
    mlp: Mlp,
}

impl ConfidenceDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, width: usize, rng: &mut R) -> Self {
        Self { mlp: Mlp::new(store, "conf.mlp", &[width, width, 1], Activation::Gelu, rng) }
    }

    /// Decoder scores in (0, 1), `samples × 1`.
    pub fn forward(&self, g: &mut Graph<'_>, features: Var, sample_segs: &[Range<usize>]) -> Result<Var> {
        if sample_segs.is_empty() {
            bail!(Input, "no samples to score");
        }
        let pooled = g.segment_mean(features, sample_segs.to_vec())?;
        let logit = self.mlp.forward(g, pooled)?;
        Ok(g.sigmoid(logit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_loss_examples() {
        assert_eq!(class_loss(&ModeProbs([1.0, 0.0, 0.0]), Behavior::Straight), 0.0);
        let u = ModeProbs([1.0 / 3.0; 3]);
        assert!((class_loss(&u, Behavior::Left) - 3f64.ln()).abs() < 1e-12);
        assert!((class_loss(&ModeProbs([1.0, 0.0, 0.0]), Behavior::Right) - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn confidence_targets() {
        let gt: Vec<Point> = (0..60).map(|i| [i as f64, 0.0]).collect();
        assert_eq!(confidence_target(&gt, &gt).unwrap(), 1.0);
        let off: Vec<Point> = gt.iter().map(|p| [p[0], 2.0]).collect();
        assert!((confidence_target(&off, &gt).unwrap() - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(ModeProbs([0.4, 0.4, 0.2]).argmax(), Behavior::Straight);
        assert_eq!(ModeProbs([0.2, 0.4, 0.4]).argmax(), Behavior::Left);
    }
}
