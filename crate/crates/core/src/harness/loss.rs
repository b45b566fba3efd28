//! Training objective: noise regression + mode classification + confidence.

use core::ops::Range;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::ndiff::{Graph, Tensor, Var};
use crate::scene::Behavior;

/// Weights of the classification and confidence terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma1: 1.0, gamma2: 0.5 }
    }
}

/// Scalar values of one evaluation of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub reg: f64,
    pub class: f64,
    pub conf: f64,
    pub total: f64,
}

/// Graph nodes of the objective's components.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub reg: Var,
    pub class: Var,
    pub conf: Var,
    pub total: Var,
}

impl LossTerms {
    pub fn values(&self, g: &Graph<'_>) -> LossValues {
        LossValues {
            reg: g.value(self.reg).item(),
            class: g.value(self.class).item(),
            conf: g.value(self.conf).item(),
            total: g.value(self.total).item(),
        }
    }
}

/// Batch mean of the (non-squared) L2 norm of each sample's noise residual.
pub fn regression_loss(g: &mut Graph<'_>, eps_hat: Var, eps: Var, sample_segs: &[Range<usize>]) -> Result<Var> {
    let r = g.sub(eps_hat, eps)?;
    let norms = g.segment_norm(r, sample_segs.to_vec())?;
    Ok(g.mean_all(norms))
}

/// Mean cross-entropy of `logits` (`batch × 3`) against `labels`.
pub fn classification_loss(g: &mut Graph<'_>, logits: Var, labels: &[Behavior]) -> Result<Var> {
    let [rows, cols] = g.shape(logits);
    if rows != labels.len() || cols != 3 {
        bail!(Usage, "{rows}x{cols} logits for {} labels", labels.len());
    }
    let onehot = Tensor::from_fn(rows, 3, |r, c| if labels[r].index() == c { -1.0 / rows as f64 } else { 0.0 });
    let lp = g.log_softmax_rows(logits);
    let w = g.constant(onehot);
    let picked = g.mul(lp, w)?;
    Ok(g.sum_all(picked))
}

/// Mean absolute difference between decoder scores and targets.
pub fn confidence_loss(g: &mut Graph<'_>, scores: Var, targets: &[f64]) -> Result<Var> {
    if g.shape(scores) != [targets.len(), 1] {
        bail!(Usage, "{:?} scores for {} targets", g.shape(scores), targets.len());
    }
    let t = g.constant(Tensor::from_vec(targets.len(), 1, targets.to_vec())?);
    let d = g.sub(scores, t)?;
    let a = g.abs(d);
    Ok(g.mean_all(a))
}

/// `L_reg + γ1·L_class + γ2·L_conf`; a non-finite component aborts with its name.
pub fn total_loss(g: &mut Graph<'_>, reg: Var, class: Var, conf: Var, w: LossWeights) -> Result<LossTerms> {
    for (name, v) in [("regression", reg), ("classification", class), ("confidence", conf)] {
        let x = g.value(v).item();
        if !x.is_finite() {
            bail!(Numeric, "{name} loss is {x}");
        }
    }
    let c = g.scale(class, w.gamma1);
    let f = g.scale(conf, w.gamma2);
    let s = g.add(reg, c)?;
    let total = g.add(s, f)?;
    Ok(LossTerms { reg, class, conf, total })
}

/// Global L2 norm of a set of gradient tensors.
pub fn grad_norm<'a>(grads: impl Iterator<Item = &'a Tensor>) -> f64 {
    let ss: f64 = grads.map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum();
    ss.sqrt()
}

impl core::fmt::Display for LossValues {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "total {:.5} (reg {:.5}, class {:.5}, conf {:.5})", self.total, self.reg, self.class, self.conf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::ParamStore;
    use alloc::vec;

    #[test]
    fn hand_batch() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let eps_hat = g.variable(Tensor::row_vector(vec![3.0, 4.0]));
        let eps = g.constant(Tensor::zeros(1, 2));
        let reg = regression_loss(&mut g, eps_hat, eps, &[0..1]).unwrap();
        let logits = g.variable(Tensor::zeros(1, 3));
        let class = classification_loss(&mut g, logits, &[Behavior::Left]).unwrap();
        let scores = g.variable(Tensor::scalar(0.9));
        let conf = confidence_loss(&mut g, scores, &[0.4]).unwrap();
        let t = total_loss(&mut g, reg, class, conf, LossWeights { gamma1: 1.0, gamma2: 0.0 }).unwrap();
        let v = t.values(&g);
        assert!((v.reg - 5.0).abs() < 1e-12);
        assert!((v.class - 3f64.ln()).abs() < 1e-12);
        assert!((v.conf - 0.5).abs() < 1e-12);
        assert!((v.total - (5.0 + 3f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_leave_regression() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.variable(Tensor::row_vector(vec![1.0, 1.0, 2.0, 2.0]));
        let b = g.constant(Tensor::row_vector(vec![1.0, 1.0, 2.0, 2.0]));
        let reg = regression_loss(&mut g, a, b, &[0..1]).unwrap();
        let c = g.constant(Tensor::scalar(7.0));
        let f = g.constant(Tensor::scalar(3.0));
        let t = total_loss(&mut g, reg, c, f, LossWeights { gamma1: 0.0, gamma2: 0.0 }).unwrap();
        assert_eq!(t.values(&g).total, 0.0);
    }

    #[test]
    fn nan_component_is_named() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let r = g.constant(Tensor::scalar(1.0));
        let c = g.constant(Tensor::scalar(f64::NAN));
        let f = g.constant(Tensor::scalar(0.0));
        let err = total_loss(&mut g, r, c, f, LossWeights::default()).unwrap_err();
        assert!(alloc::format!("{err}").contains("classification"));
    }
}
