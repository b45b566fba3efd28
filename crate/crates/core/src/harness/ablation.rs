use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, EvalConfig};
use super::train::{split_by_id, train, TrainConfig};
use crate::error::{bail, Result};
use crate::metrics::MetricsReport;
use crate::scene::Scenario;

/// Sweep over the number of diffusion steps; each run trains for
/// `epochs_per_step × T` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationPlan {
    pub steps_list: Vec<usize>,
    pub epochs_per_step: usize,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self { steps_list: Vec::from([5, 10, 20, 32, 50, 100]), epochs_per_step: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub steps: usize,
    pub epochs: usize,
    /// Validation metrics, or the reason the run failed.
    pub outcome: core::result::Result<MetricsReport, String>,
}

/// Trains and evaluates one model per step count. A failed run is recorded
/// and the sweep continues.
pub fn run_ablation(base: &TrainConfig, plan: &AblationPlan, data: &[Scenario], mut observe: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    if plan.steps_list.is_empty() || plan.epochs_per_step == 0 {
        bail!(Config, "ablation needs at least one step count and a positive epochs_per_step");
    }
    let (_, val) = split_by_id(data, base.val_fraction);
    if val.is_empty() {
        bail!(Input, "validation split is empty; raise val_fraction or add scenarios");
    }
    let val: Vec<&Scenario> = val.into_iter().take(base.eval_limit).collect();
    let mut rows = Vec::with_capacity(plan.steps_list.len());
    for &steps in &plan.steps_list {
        let epochs = plan.epochs_per_step * steps;
        let cfg = TrainConfig { diffusion_steps: steps, epochs, eval_every: 0, ..base.clone() };
        let eval_cfg = EvalConfig { k: cfg.eval_k, ..EvalConfig::new(cfg.sampling_mode(), cfg.seed) };
        let outcome = train(&cfg, data)
            .and_then(|o| match o.divergence {
                Some(d) => Err(crate::Error::Numeric(d)),
                None => Ok(o.model),
            })
            .and_then(|m| evaluate(&m, &val, &eval_cfg))
            .map(|e| e.report)
            .map_err(|e| alloc::format!("{e}"));
        let row = AblationRow { steps, epochs, outcome };
        observe(&row);
        rows.push(row);
    }
    Ok(rows)
}
