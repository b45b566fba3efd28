//! Command-line interface. `main` only maps [`run`]'s error to an exit code.

use std::path::{Path, PathBuf};

use cdt_core::diffusion::{SamplingMode, DEFAULT_SIGMA_EP};
use cdt_core::harness::{run_ablation, score_predictions, split_by_id, train_with, EvalConfig};
use cdt_core::scene::{generate_dataset, Scenario};
use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{read_dataset, write_dataset};
use crate::error::{CliError, Result};
use crate::plot::line_chart;
use crate::predictions::{read_predictions, write_predictions};
use crate::report::{read_numeric_columns, write_ablation, write_loss_curve, write_per_scenario, write_report, AblationCsvRow};
use crate::runner::predict_parallel;

#[derive(Debug, Parser)]
#[command(name = "cdt", version, about = "Behavior-controllable diffusion trajectory prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleVariant {
    Baseline,
    Behavior,
    Endpoint,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from the `dataset` section of a config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from the `train` section of a config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample K futures per scenario from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        variant: SampleVariant,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Endpoint noise in meters for the endpoint variant.
        #[arg(long, default_value_t = DEFAULT_SIGMA_EP)]
        sigma_ep: f64,
    },
    /// Score predictions against a dataset.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-scenario CSV; defaults to `<out>` with a `.per_scenario.csv` suffix.
        #[arg(long)]
        per_scenario: Option<PathBuf>,
    },
    /// Train and evaluate one model per diffusion step count.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw CSV columns against the first column as an SVG line chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated columns; defaults to the `min_*` columns, or every
        /// numeric column after the first.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
    },
}

/// `path` with its extension replaced by `suffix` (which includes the dot).
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let scenes = generate_dataset(&cfg.dataset)?;
            write_dataset(&out, &scenes)?;
            eprintln!("wrote {} scenarios to {}", scenes.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let cfg = RunConfig::load(&config)?;
            let scenes = read_dataset(&data)?;
            if scenes.is_empty() {
                return Err(CliError::Usage(format!("{} holds no scenarios", data.display())));
            }
            let outcome = train_with(&cfg.train, &scenes, |e| {
                let val = e.val_min_ade.map(|v| format!(", val min_ade {v:.4}")).unwrap_or_default();
                eprintln!("epoch {:>4}: {} lr {:.3e}{val}", e.epoch, e.loss, e.lr);
            })?;
            save_checkpoint(&out, &outcome.model, Some(&outcome.optimizer))?;
            if let Some((best, ade)) = &outcome.best {
                save_checkpoint(&sibling(&out, ".best.json"), best, None)?;
                eprintln!("best validation min_ade {ade:.4}");
            }
            write_loss_curve(&sibling(&out, ".loss.csv"), &outcome.log)?;
            if let Some(d) = outcome.divergence {
                return Err(cdt_core::Error::Numeric(format!("training diverged at {d}; last good weights saved to {}", out.display())).into());
            }
        }
        Command::Sample { ckpt, data, variant, k, out, seed, sigma_ep } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let scenes = read_dataset(&data)?;
            let mode = match variant {
                SampleVariant::Baseline => SamplingMode::Baseline,
                SampleVariant::Behavior => SamplingMode::BehaviorControlled,
                SampleVariant::Endpoint => SamplingMode::EndpointControlled { sigma_ep },
            };
            let cfg = EvalConfig { k, ..EvalConfig::new(mode, seed) };
            let refs: Vec<&Scenario> = scenes.iter().collect();
            let preds = predict_parallel(&model, &refs, &cfg)?;
            write_predictions(&out, &preds)?;
        }
        Command::Eval { preds, data, out, per_scenario } => {
            let preds = read_predictions(&preds)?;
            let scenes = read_dataset(&data)?;
            let refs: Vec<&Scenario> = scenes.iter().collect();
            let (report, rows) = score_predictions(&preds, &refs)?;
            write_report(&out, &report)?;
            write_per_scenario(&per_scenario.unwrap_or_else(|| sibling(&out, ".per_scenario.csv")), &rows)?;
        }
        Command::Ablate { config, data, out } => {
            let cfg = RunConfig::load(&config)?;
            let scenes = read_dataset(&data)?;
            if split_by_id(&scenes, cfg.train.val_fraction).1.is_empty() {
                return Err(CliError::Usage("the validation split is empty".into()));
            }
            std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
            let rows = run_ablation(&cfg.train, &cfg.ablation, &scenes, |r| match &r.outcome {
                Ok(m) => eprintln!("steps {:>3}, epochs {:>4}: min_ade {:.4}, min_fde {:.4}", r.steps, r.epochs, m.min_ade, m.min_fde),
                Err(e) => eprintln!("steps {:>3}, epochs {:>4}: failed: {e}", r.steps, r.epochs),
            })?;
            let rows: Vec<AblationCsvRow> = rows.iter().map(Into::into).collect();
            let csv = out.join("ablation.csv");
            write_ablation(&csv, &rows)?;
            plot_csv(&csv, &out.join("ablation.svg"), &[])?;
        }
        Command::Plot { input, out, columns } => plot_csv(&input, &out, &columns)?,
    }
    Ok(())
}

fn plot_csv(input: &Path, out: &Path, columns: &[String]) -> Result<()> {
    let cols = read_numeric_columns(input)?;
    let Some((x_name, x)) = cols.first() else {
        return Err(CliError::Schema { path: input.to_path_buf(), line: 1, detail: "no columns".into() });
    };
    if x.iter().any(Option::is_none) {
        return Err(CliError::Schema { path: input.to_path_buf(), line: 0, detail: format!("x column {x_name} must be numeric") });
    }
    let x: Vec<f64> = x.iter().flatten().copied().collect();
    let numeric = |c: &&(String, Vec<Option<f64>>)| c.1.iter().any(Option::is_some);
    let series: Vec<(String, Vec<Option<f64>>)> = if columns.is_empty() {
        let metrics: Vec<_> = cols[1..].iter().filter(|c| c.0.starts_with("min_")).filter(numeric).cloned().collect();
        if metrics.is_empty() {
            cols[1..].iter().filter(numeric).cloned().collect()
        } else {
            metrics
        }
    } else {
        let mut picked = Vec::with_capacity(columns.len());
        for name in columns {
            match cols.iter().find(|c| &c.0 == name) {
                Some(c) => picked.push(c.clone()),
                None => return Err(CliError::Usage(format!("column {name} not in {}", input.display()))),
            }
        }
        picked
    };
    let title = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    std::fs::write(out, line_chart(&title, x_name, &x, &series)).map_err(|e| CliError::io(out, e))
}

/// Parses `args`, runs the command and returns the process exit code,
/// printing at most one error line to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            let err = CliError::Usage(first);
            eprintln!("{}", err.one_line());
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.one_line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdt_core::Variant;

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("/tmp/run/model.json"), ".best.json"), PathBuf::from("/tmp/run/model.best.json"));
        assert_eq!(sibling(Path::new("report.csv"), ".per_scenario.csv"), PathBuf::from("report.per_scenario.csv"));
    }

    #[test]
    fn variant_names_match_core() {
        for (v, name) in [(SampleVariant::Baseline, "baseline"), (SampleVariant::Behavior, "behavior"), (SampleVariant::Endpoint, "endpoint")] {
            assert_eq!(v.to_possible_value().unwrap().get_name(), name);
            assert!(Variant::parse(name).is_some());
        }
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["cdt", "sample", "--k", "x"]), 2);
        assert_eq!(main_with_args(["cdt", "frobnicate"]), 2);
    }
}
