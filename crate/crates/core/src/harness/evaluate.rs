use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample, PredictionSet, SamplingMode};
use crate::error::{bail, Result};
use crate::metrics::{aggregate, score, MetricsReport, ScenarioMetrics};
use crate::model::Model;
use crate::scene::Scenario;

/// 64-bit FNV-1a, used for id-derived streams and the validation split.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Random stream of one scenario, independent of batching and order.
pub fn scenario_stream(seed: u64, id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(id.as_bytes()));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub mode: SamplingMode,
    pub seed: u64,
    /// Scenarios sampled together per denoiser call.
    pub batch: usize,
}

impl EvalConfig {
    pub fn new(mode: SamplingMode, seed: u64) -> Self {
        Self { k: 6, mode, seed, batch: 8 }
    }
}

/// Samples predictions for every scenario.
pub fn predict(model: &Model, scenes: &[&Scenario], cfg: &EvalConfig) -> Result<Vec<PredictionSet>> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(cfg.batch.max(1)) {
        let mut rngs: Vec<ChaCha8Rng> = chunk.iter().map(|s| scenario_stream(cfg.seed, &s.id)).collect();
        out.extend(sample(model, chunk, cfg.k, cfg.mode, &mut rngs)?);
    }
    Ok(out)
}

/// Per-scenario and aggregate metrics of predictions matched to scenarios by id.
pub fn score_predictions(preds: &[PredictionSet], scenes: &[&Scenario]) -> Result<(MetricsReport, Vec<(String, ScenarioMetrics)>)> {
    if preds.is_empty() {
        bail!(Input, "no predictions to score");
    }
    let mut rows = Vec::with_capacity(preds.len());
    let k = preds[0].samples.len();
    let by_id: BTreeMap<&str, &Scenario> = scenes.iter().map(|s| (s.id.as_str(), *s)).collect();
    for p in preds {
        let Some(s) = by_id.get(p.id.as_str()) else {
            bail!(Input, "prediction {} has no matching scenario", p.id);
        };
        if p.samples.len() != k {
            bail!(Input, "prediction {} has {} samples, expected {k}", p.id, p.samples.len());
        }
        rows.push((p.id.clone(), score(&p.samples, &s.future, &s.drivable)?));
    }
    let per: Vec<ScenarioMetrics> = rows.iter().map(|r| r.1).collect();
    Ok((aggregate(&per, k)?, rows))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub per_scenario: Vec<(String, ScenarioMetrics)>,
    pub predictions: Vec<PredictionSet>,
}

pub fn evaluate(model: &Model, scenes: &[&Scenario], cfg: &EvalConfig) -> Result<Evaluation> {
    let predictions = predict(model, scenes, cfg)?;
    let (report, per_scenario) = score_predictions(&predictions, scenes)?;
    Ok(Evaluation { report, per_scenario, predictions })
}
