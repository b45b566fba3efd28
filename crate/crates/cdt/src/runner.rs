//! Parallel sampling over scenarios with frozen weights.

use cdt_core::diffusion::PredictionSet;
use cdt_core::harness::{predict, score_predictions, EvalConfig, Evaluation};
use cdt_core::scene::Scenario;
use cdt_core::Model;
use rayon::prelude::*;

use crate::error::Result;

/// Samples every scenario. Chunks of `cfg.batch` run in parallel; each
/// scenario draws from its own id-derived stream, so the output does not
/// depend on the thread count.
pub fn predict_parallel(model: &Model, scenes: &[&Scenario], cfg: &EvalConfig) -> Result<Vec<PredictionSet>> {
    cfg.mode.check(model.variant)?;
    let chunks: Vec<_> = scenes.par_chunks(cfg.batch.max(1)).map(|c| predict(model, c, cfg)).collect();
    let mut out = Vec::with_capacity(scenes.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate_parallel(model: &Model, scenes: &[&Scenario], cfg: &EvalConfig) -> Result<Evaluation> {
    let predictions = predict_parallel(model, scenes, cfg)?;
    let (report, per_scenario) = score_predictions(&predictions, scenes)?;
    Ok(Evaluation { report, per_scenario, predictions })
}
