//! JSON-lines prediction files, one scenario per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cdt_core::diffusion::{BehaviorToken, PredictionSet};
use cdt_core::heads::ModeProbs;
use cdt_core::scene::{Behavior, Point};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// A token as it appears in files: `null`, a mode name or `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TokenRecord {
    Mode(Behavior),
    Endpoint(Point),
    None(()),
}

impl From<BehaviorToken> for TokenRecord {
    fn from(t: BehaviorToken) -> Self {
        match t {
            BehaviorToken::None => TokenRecord::None(()),
            BehaviorToken::Mode(b) => TokenRecord::Mode(b),
            BehaviorToken::Endpoint(p) => TokenRecord::Endpoint(p),
        }
    }
}

impl From<TokenRecord> for BehaviorToken {
    fn from(t: TokenRecord) -> Self {
        match t {
            TokenRecord::None(()) => BehaviorToken::None,
            TokenRecord::Mode(b) => BehaviorToken::Mode(b),
            TokenRecord::Endpoint(p) => BehaviorToken::Endpoint(p),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    id: String,
    samples: Vec<Vec<Point>>,
    confidences: Vec<f64>,
    decoder_scores: Vec<f64>,
    /// Straight, left, right.
    mode_probs: [f64; 3],
    tokens: Vec<TokenRecord>,
}

pub fn to_line(p: &PredictionSet) -> String {
    let rec = PredictionRecord {
        id: p.id.clone(),
        samples: p.samples.clone(),
        confidences: p.confidences.clone(),
        decoder_scores: p.decoder_scores.clone(),
        mode_probs: p.mode_probs.0,
        tokens: p.tokens.iter().map(|&t| t.into()).collect(),
    };
    serde_json::to_string(&rec).expect("prediction records always serialize")
}

pub fn from_line(text: &str, path: &Path, line: usize) -> Result<PredictionSet> {
    let rec: PredictionRecord = serde_json::from_str(text).map_err(|e| {
        let detail = e.to_string();
        match e.classify() {
            serde_json::error::Category::Data => CliError::Schema { path: path.to_path_buf(), line, detail },
            _ => CliError::Parse { path: path.to_path_buf(), line, detail },
        }
    })?;
    let k = rec.samples.len();
    let schema = |detail: String| CliError::Schema { path: path.to_path_buf(), line, detail };
    if k == 0 {
        return Err(schema(format!("prediction {} has no samples", rec.id)));
    }
    if rec.confidences.len() != k || rec.decoder_scores.len() != k || rec.tokens.len() != k {
        return Err(schema(format!(
            "prediction {}: {k} samples but {} confidences, {} decoder scores and {} tokens",
            rec.id,
            rec.confidences.len(),
            rec.decoder_scores.len(),
            rec.tokens.len()
        )));
    }
    let h = rec.samples[0].len();
    if h == 0 || rec.samples.iter().any(|s| s.len() != h) {
        return Err(schema(format!("prediction {}: samples have unequal or zero length", rec.id)));
    }
    Ok(PredictionSet {
        id: rec.id,
        samples: rec.samples,
        confidences: rec.confidences,
        decoder_scores: rec.decoder_scores,
        mode_probs: ModeProbs(rec.mode_probs),
        tokens: rec.tokens.into_iter().map(Into::into).collect(),
    })
}

pub fn write_predictions(path: &Path, preds: &[PredictionSet]) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for p in preds {
        writeln!(w, "{}", to_line(p)).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionSet>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_line(&line, path, i + 1)?);
    }
    Ok(out)
}
