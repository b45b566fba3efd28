//! CSV reports: dataset metrics (`metric,K,value,n`), per-scenario metrics
//! and ablation rows.

use std::path::Path;

use cdt_core::harness::{AblationRow, EpochLog};
use cdt_core::metrics::{MetricsReport, ScenarioMetrics};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct MetricRow {
    metric: String,
    #[serde(rename = "K")]
    k: usize,
    value: f64,
    n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRow {
    id: String,
    min_ade: f64,
    min_fde: f64,
    miss: f64,
    asd: f64,
    fsd: f64,
    ecfl: f64,
}

/// One line of the ablation table; failed runs keep the reason in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsvRow {
    pub steps: usize,
    pub epochs: usize,
    pub min_ade6: Option<f64>,
    pub min_fde6: Option<f64>,
    pub status: String,
}

impl From<&AblationRow> for AblationCsvRow {
    fn from(r: &AblationRow) -> Self {
        match &r.outcome {
            Ok(m) => AblationCsvRow { steps: r.steps, epochs: r.epochs, min_ade6: Some(m.min_ade), min_fde6: Some(m.min_fde), status: "ok".into() },
            Err(e) => AblationCsvRow { steps: r.steps, epochs: r.epochs, min_ade6: None, min_fde6: None, status: format!("failed: {e}") },
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        kind => CliError::Parse { path: path.to_path_buf(), line, detail: format!("{kind:?}") },
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write_rows(path, report.rows().into_iter().map(|(name, value)| MetricRow { metric: name.into(), k: report.k, value, n: report.n }))
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let rows: Vec<MetricRow> = read_rows(path)?;
    let schema = |detail: String| CliError::Schema { path: path.to_path_buf(), line: 0, detail };
    let Some(first) = rows.first() else {
        return Err(schema("report has no rows".into()));
    };
    let (k, n) = (first.k, first.n);
    let get = |name: &str| -> Result<f64> {
        rows.iter().find(|r| r.metric == name).map(|r| r.value).ok_or_else(|| schema(format!("metric {name} missing")))
    };
    if rows.iter().any(|r| r.k != k || r.n != n) {
        return Err(schema("rows disagree on K or n".into()));
    }
    Ok(MetricsReport {
        k,
        n,
        min_ade: get("min_ade")?,
        min_fde: get("min_fde")?,
        miss_rate: get("miss_rate")?,
        asd: get("asd")?,
        fsd: get("fsd")?,
        ecfl: get("ecfl")?,
    })
}

pub fn write_per_scenario(path: &Path, rows: &[(String, ScenarioMetrics)]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|(id, m)| ScenarioRow {
            id: id.clone(),
            min_ade: m.min_ade,
            min_fde: m.min_fde,
            miss: m.miss,
            asd: m.asd,
            fsd: m.fsd,
            ecfl: m.ecfl,
        }),
    )
}

pub fn read_per_scenario(path: &Path) -> Result<Vec<(String, ScenarioMetrics)>> {
    let rows: Vec<ScenarioRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.id, ScenarioMetrics { min_ade: r.min_ade, min_fde: r.min_fde, miss: r.miss, asd: r.asd, fsd: r.fsd, ecfl: r.ecfl }))
        .collect())
}

#[derive(Debug, Serialize)]
struct LossRow {
    epoch: usize,
    total: f64,
    reg: f64,
    class: f64,
    conf: f64,
    lr: f64,
    val_min_ade: Option<f64>,
}

/// Per-epoch training losses.
pub fn write_loss_curve(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_rows(
        path,
        log.iter().map(|e| LossRow {
            epoch: e.epoch,
            total: e.loss.total,
            reg: e.loss.reg,
            class: e.loss.class,
            conf: e.loss.conf,
            lr: e.lr,
            val_min_ade: e.val_min_ade,
        }),
    )
}

pub fn write_ablation(path: &Path, rows: &[AblationCsvRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_ablation(path: &Path) -> Result<Vec<AblationCsvRow>> {
    read_rows(path)
}

/// Numeric columns of any CSV with a header, as `(name, values)`; the first
/// column is the x axis. Empty or non-numeric cells become `None`.
pub fn read_numeric_columns(path: &Path) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let mut cols: Vec<(String, Vec<Option<f64>>)> = headers.into_iter().map(|h| (h, Vec::new())).collect();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (i, col) in cols.iter_mut().enumerate() {
            col.1.push(rec.get(i).and_then(|v| v.trim().parse().ok()));
        }
    }
    Ok(cols)
}
