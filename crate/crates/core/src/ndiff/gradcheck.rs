//! Central finite-difference verification of reverse-mode gradients.

use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

/// Denominator floor of the element-wise relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// max over entries of `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub entries: usize,
}

/// Compares the gradient of the scalar `f` with respect to every parameter
/// in `store` and every entry of `inputs` against central differences with
/// step `h`.
pub fn gradcheck<F>(store: &ParamStore, inputs: &[Tensor], h: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |s: &ParamStore, xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference(s);
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradcheckReport { max_rel_err: 0.0, max_abs_err: 0.0, entries: 0 };
    let mut record = |analytic: f64, numeric: f64| {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.entries += 1;
    };

    let mut work = store.clone();
    for (id, p) in store.iter() {
        let zero = Tensor::zeros(p.value.rows(), p.value.cols());
        let analytic = grads.param(id).unwrap_or(&zero).clone();
        for i in 0..p.value.len() {
            let orig = p.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(&work, inputs)?;
            work.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(&work, inputs)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            record(analytic.data()[i], (plus - minus) / (2.0 * h));
        }
    }

    let mut xs: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let plus = eval(store, &xs)?;
            xs[k].data_mut()[i] = orig - h;
            let minus = eval(store, &xs)?;
            xs[k].data_mut()[i] = orig;
            record(analytic.data()[i], (plus - minus) / (2.0 * h));
        }
    }
    if !report.max_rel_err.is_finite() {
        return Err(Error::Numeric("non-finite gradcheck error".into()));
    }
    Ok(report)
}

/// Fixed random projection `sum(out ⊙ weights)` used to turn a tensor output
/// into a scalar with well-spread gradients.
pub fn project_to_scalar(g: &mut Graph<'_>, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}
