//! Steps shared by the commands: loading, partitioning, training one split
//! and scoring a table.

use std::path::Path;

use serde_json::{json, Value};
use tabflow_core::data::{chrono_split, cv_splits, parse_date, Preprocessor, Provenance, RawTable, SchemaDecl};
use tabflow_core::evaluation::{self, EvalOptions, Evaluation};
use tabflow_core::train::{self, History, TrainConfig};

use crate::artifact::ModelBundle;
use crate::config::{RunConfig, SplitKind};
use crate::error::{CliError, Result};
use crate::io;

/// Keys present in every `metrics.json`.
pub const METRICS_KEYS: [&str; 11] = [
    "nll",
    "rmse",
    "mape",
    "crps",
    "aurc",
    "confidence_method",
    "risk_measure",
    "seed",
    "n_samples",
    "rows",
    "provenance",
];

/// Columns of `predictions.csv` written by `evaluate`.
pub const PREDICTION_COLUMNS: [&str; 8] = [
    "row",
    "target",
    "mean",
    "median",
    "std",
    "log_density",
    "crps",
    "confidence",
];

/// The declared schema and the full table it describes.
pub struct Inputs {
    pub decl: SchemaDecl,
    pub table: RawTable,
    pub source: String,
}

impl Inputs {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let decl = io::load_schema(&config.data.schema)?;
        let table = io::load_csv(&config.data.path, &decl)?;
        Ok(Self {
            decl,
            table,
            source: config.data.path.display().to_string(),
        })
    }
}

/// Train, validation and test rows of one split.
pub struct Partition {
    pub index: usize,
    pub label: String,
    /// Seed for initialization, shuffling, dropout and sampling.
    pub seed: u64,
    pub train: RawTable,
    pub validation: RawTable,
    pub test: RawTable,
    pub dropped: usize,
}

/// Seed used for everything downstream of split `index`.
pub fn split_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Number of partitions a config describes.
pub fn partition_count(config: &RunConfig) -> usize {
    match config.split.kind {
        SplitKind::Cv => config.split.splits,
        SplitKind::Chrono => 1,
    }
}

pub fn partition(config: &RunConfig, inputs: &Inputs, index: usize) -> Result<Partition> {
    let s = &config.split;
    match s.kind {
        SplitKind::Cv => {
            let splits = cv_splits(
                inputs.table.len(),
                s.splits,
                s.test_fraction,
                s.val_fraction,
                config.seed,
            )?;
            let split = splits
                .get(index)
                .ok_or_else(|| CliError::Config(format!("split {index} requested but only {} configured", s.splits)))?;
            let t = &inputs.table;
            Ok(Partition {
                index,
                label: format!("cv {index} of {} (seed {})", s.splits, config.seed),
                seed: split_seed(config.seed, index),
                train: t.select_rows(&split.train),
                validation: t.select_rows(&split.validation),
                test: t.select_rows(&split.test),
                dropped: 0,
            })
        }
        SplitKind::Chrono => {
            let date = |d: &Option<String>| parse_date(d.as_deref().unwrap_or_default());
            let column = s.column.as_deref().unwrap_or_default();
            let parts = chrono_split(
                &inputs.table,
                column,
                date(&s.train_end)?,
                date(&s.val_end)?,
                date(&s.test_end)?,
            )?;
            Ok(Partition {
                index: 0,
                label: format!(
                    "chrono on {column}: ..{}, ..{}, ..{}",
                    s.train_end.as_deref().unwrap_or_default(),
                    s.val_end.as_deref().unwrap_or_default(),
                    s.test_end.as_deref().unwrap_or_default()
                ),
                seed: config.seed,
                train: parts.train,
                validation: parts.validation,
                test: parts.test,
                dropped: parts.dropped,
            })
        }
    }
}

/// Fits the preprocessor on the training rows and trains a model.
pub fn train_partition(decl: &SchemaDecl, part: &Partition, config: &TrainConfig) -> Result<(ModelBundle, History)> {
    let preprocessor = Preprocessor::fit(&part.train, decl)?;
    let tr = preprocessor.transform(&part.train)?;
    let va = preprocessor.transform(&part.validation)?;
    let (model, history) = train::train(&tr, &va, preprocessor.target, config)?;
    Ok((ModelBundle { model, preprocessor }, history))
}

/// Fails unless `decl` is the declaration the model was trained with.
pub fn check_schema(bundle: &ModelBundle, decl: &SchemaDecl) -> Result<()> {
    if &bundle.preprocessor.decl != decl {
        return Err(tabflow_core::Error::Structural(
            "the configured schema differs from the one the model was trained with".into(),
        )
        .into());
    }
    Ok(())
}

/// Scores `bundle` on the labelled rows of `table`.
pub fn evaluate_table(
    bundle: &ModelBundle,
    table: &RawTable,
    options: &EvalOptions,
) -> Result<(Evaluation, Provenance)> {
    let dataset = bundle.preprocessor.transform(table)?;
    bundle.preprocessor.ensure_produced(&dataset)?;
    let targets = bundle.preprocessor.raw_targets(table)?;
    let ev = evaluation::evaluate(&bundle.model, &dataset.features, &targets, options)?;
    Ok((ev, dataset.provenance))
}

pub fn provenance(mut p: Provenance, source: &str, part: &Partition) -> Provenance {
    p.source = source.to_string();
    p.split = part.label.clone();
    p.dropped_rows = part.dropped;
    p
}

pub fn metrics_json(ev: &Evaluation, options: &EvalOptions, provenance: &Provenance) -> Value {
    json!({
        "nll": ev.nll,
        "rmse": ev.rmse,
        "mape": ev.mape,
        "crps": ev.crps,
        "aurc": ev.aurc,
        "confidence_method": options.confidence.name(),
        "risk_measure": options.risk.name(),
        "seed": options.seed,
        "n_samples": options.samples,
        "rows": ev.rows.len(),
        "provenance": {
            "source": provenance.source,
            "split": provenance.split,
            "preprocessor": format!("{:016x}", provenance.preprocessor),
            "unknown_categories": provenance.unknown_categories,
            "dropped_rows": provenance.dropped_rows,
        },
    })
}

pub fn write_predictions(path: &Path, ev: &Evaluation) -> Result<()> {
    io::write_csv(
        path,
        &PREDICTION_COLUMNS,
        ev.rows.iter().enumerate().map(|(i, r)| {
            let mut row = vec![i.to_string()];
            row.extend([r.target, r.mean, r.median, r.std, r.log_density, r.crps, r.confidence].map(|v| v.to_string()));
            row
        }),
    )
}

/// `coverage,risk` at the ten deciles.
pub fn write_curve(path: &Path, ev: &Evaluation) -> Result<()> {
    let curve = ev.curve.as_ref().ok_or_else(|| {
        tabflow_core::Error::Structural("no risk-coverage curve: need at least 10 rows with defined risk".into())
    })?;
    io::write_csv(
        path,
        &["coverage", "risk"],
        curve
            .coverage
            .iter()
            .zip(&curve.risk)
            .map(|(c, r)| vec![c.to_string(), r.to_string()]),
    )
}
