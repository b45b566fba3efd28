//! Versioned JSON checkpoints holding the architecture, every weight and,
//! optionally, the optimizer state.

use std::path::Path;

use cdt_core::ndiff::{AdamW, Tensor};
use cdt_core::{Model, ModelConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CHECKPOINT_FORMAT: &str = "cdt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    variant: Variant,
    model: ModelConfig,
    params: Vec<ParamRecord>,
    optimizer: Option<AdamW>,
}

/// Serializes a checkpoint; floats use the shortest exact representation,
/// so loading restores every weight bit for bit.
pub fn to_json(model: &Model, optimizer: Option<&AdamW>) -> String {
    let params = model
        .store
        .iter()
        .map(|(_, p)| ParamRecord { name: p.name.clone(), rows: p.value.rows(), cols: p.value.cols(), data: p.value.data().to_vec() })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        variant: model.variant,
        model: model.config.clone(),
        params,
        optimizer: optimizer.cloned(),
    };
    serde_json::to_string(&file).expect("checkpoints always serialize")
}

pub fn from_json(text: &str, path: &Path) -> Result<(Model, Option<AdamW>)> {
    let schema = |detail: String| CliError::Schema { path: path.to_path_buf(), line: 0, detail };
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| {
        let detail = e.to_string();
        match e.classify() {
            serde_json::error::Category::Data => schema(detail),
            _ => CliError::Parse { path: path.to_path_buf(), line: e.line(), detail },
        }
    })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(schema(format!("not a checkpoint (format {:?})", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(schema(format!("checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})", file.version)));
    }
    let mut model = Model::new(file.model, file.variant, 0)?;
    if file.params.len() != model.store.len() {
        return Err(schema(format!("{} parameters in checkpoint, model has {}", file.params.len(), model.store.len())));
    }
    for p in file.params {
        let t = Tensor::from_vec(p.rows, p.cols, p.data).map_err(|e| schema(format!("parameter {}: {e}", p.name)))?;
        model.set_param(&p.name, t).map_err(|e| schema(e.to_string()))?;
    }
    if let Some(opt) = &file.optimizer {
        if !opt.m.is_empty() && (opt.m.len() != model.store.len() || opt.v.len() != model.store.len()) {
            return Err(schema("optimizer moments do not match the parameter list".into()));
        }
    }
    model.mark_ready();
    Ok((model, file.optimizer))
}

pub fn save_checkpoint(path: &Path, model: &Model, optimizer: Option<&AdamW>) -> Result<()> {
    std::fs::write(path, to_json(model, optimizer)).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<AdamW>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { width: 8, heads: 2, blocks: 1, ff_mult: 2, horizon: 60, ..Default::default() }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = Model::new(tiny(), Variant::EndpointControlled, 42).unwrap();
        let (back, opt) = from_json(&to_json(&m, None), Path::new("mem")).unwrap();
        assert!(opt.is_none());
        assert!(back.is_ready());
        assert_eq!(back.variant, Variant::EndpointControlled);
        for ((_, a), (_, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn version_and_shape_checks() {
        let m = Model::new(tiny(), Variant::Baseline, 1).unwrap();
        let text = to_json(&m, None).replace("\"version\":1", "\"version\":9");
        assert!(matches!(from_json(&text, Path::new("c")), Err(CliError::Schema { .. })));
        let mut v: serde_json::Value = serde_json::from_str(&to_json(&m, None)).unwrap();
        v["params"][0]["rows"] = serde_json::json!(999);
        assert!(matches!(from_json(&v.to_string(), Path::new("c")), Err(CliError::Schema { .. })));
    }
}
