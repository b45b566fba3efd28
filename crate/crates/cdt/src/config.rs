//! JSON run configuration: a `dataset`, a `train` and an `ablation` section,
//! each optional and filled with defaults.

use std::path::Path;

use cdt_core::harness::{AblationPlan, TrainConfig};
use cdt_core::scene::DatasetConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub ablation: AblationPlan,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("line {}: {e}", e.line())))?;
        cfg.dataset.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections() {
        let c = RunConfig::from_json(r#"{"train": {"epochs": 3, "variant": "nomap", "model": {"width": 16}}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.variant, cdt_core::Variant::NoMap);
        assert_eq!(c.train.model.width, 16);
        assert_eq!(c.train.batch_size, 64);
    }

    #[test]
    fn rejects_typos_and_bad_values() {
        assert!(matches!(RunConfig::from_json(r#"{"trian": {}}"#), Err(CliError::Config(_))));
        let e = RunConfig::from_json(r#"{"dataset": {"class_mix": [0.5, 0.5, 0.5]}}"#).unwrap_err();
        assert_eq!(e.kind(), "config");
    }
}
