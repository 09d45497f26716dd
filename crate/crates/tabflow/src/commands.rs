//! The command implementations behind the CLI. Each returns what it wrote
//! so callers and tests can inspect it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use tabflow_core::data::RawTable;
use tabflow_core::encoder::Batch;
use tabflow_core::evaluation::{self, EvalOptions, Evaluation};
use tabflow_core::metrics::{self, ConfidenceMethod, RiskCoverageCurve, DECILES};
use tabflow_core::train::History;

use crate::artifact::ModelBundle;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;
use crate::pipeline::{self, Inputs, Partition};

pub fn model_path(config: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| config.out.join("model.bin"), Path::to_path_buf)
}

/// Trains on the configured split; writes `model.bin`, `history.json` and
/// `config.toml`.
pub fn train(config: &RunConfig) -> Result<History> {
    let inputs = Inputs::load(config)?;
    let part = pipeline::partition(config, &inputs, config.split.index)?;
    let (bundle, history) = pipeline::train_partition(&inputs.decl, &part, &config.train_config(part.seed))?;
    bundle.save(&config.out.join("model.bin"))?;
    io::write_json(&config.out.join("history.json"), &history)?;
    io::write_text(&config.out.join("config.toml"), &config.to_toml())?;
    println!(
        "{}: best epoch {} of {}, validation NLL {:.4}",
        part.label,
        history.best_epoch,
        history.epochs.len(),
        history.best_val_nll
    );
    Ok(history)
}

fn load_model(inputs: &Inputs, path: &Path) -> Result<ModelBundle> {
    let bundle = ModelBundle::load(path)?;
    pipeline::check_schema(&bundle, &inputs.decl)?;
    Ok(bundle)
}

fn score(
    config: &RunConfig,
    model: Option<&Path>,
    options: impl Fn(u64) -> EvalOptions,
) -> Result<(Evaluation, Value)> {
    let inputs = Inputs::load(config)?;
    let part = pipeline::partition(config, &inputs, config.split.index)?;
    let bundle = load_model(&inputs, &model_path(config, model))?;
    let opts = options(part.seed);
    let (ev, prov) = pipeline::evaluate_table(&bundle, &part.test, &opts)?;
    let metrics = pipeline::metrics_json(&ev, &opts, &pipeline::provenance(prov, &inputs.source, &part));
    Ok((ev, metrics))
}

/// Scores the model on the test rows; writes `metrics.json` and
/// `predictions.csv`.
pub fn evaluate(config: &RunConfig, model: Option<&Path>) -> Result<Value> {
    let (ev, metrics) = score(config, model, |seed| config.eval_options(seed))?;
    io::write_json(&config.out.join("metrics.json"), &metrics)?;
    pipeline::write_predictions(&config.out.join("predictions.csv"), &ev)?;
    println!("NLL {:.4}  RMSE {:.4}  CRPS {:.4}", ev.nll, ev.rmse, ev.crps);
    Ok(metrics)
}

fn require_curve<'a>(ev: &'a Evaluation, opts: &EvalOptions) -> Result<&'a RiskCoverageCurve> {
    if let Some(c) = &ev.curve {
        return Ok(c);
    }
    if ev.rows.len() < DECILES.len() {
        return Err(tabflow_core::Error::Structural(format!(
            "a risk-coverage curve needs at least {} rows, got {}",
            DECILES.len(),
            ev.rows.len()
        ))
        .into());
    }
    let conf: Vec<f64> = ev.rows.iter().map(|r| r.confidence).collect();
    let pred: Vec<f64> = ev.rows.iter().map(|r| r.mean).collect();
    let target: Vec<f64> = ev.rows.iter().map(|r| r.target).collect();
    Err(metrics::risk_curve(opts.risk, &conf, &pred, &target, &DECILES)
        .err()
        .unwrap_or_else(|| tabflow_core::Error::Structural("risk curve unavailable".into()))
        .into())
}

/// Risk-coverage curves for both confidence methods; writes
/// `riskcov_<method>.csv` per method and `metrics.json` with the AURC of
/// each.
pub fn riskcov(config: &RunConfig, model: Option<&Path>) -> Result<Value> {
    let mut metrics = Value::Null;
    let mut by_method = serde_json::Map::new();
    for method in [ConfidenceMethod::InvStd, ConfidenceMethod::NegEntropy] {
        let options = |seed| EvalOptions {
            confidence: method,
            ..config.eval_options(seed)
        };
        let (ev, m) = score(config, model, options)?;
        let curve = require_curve(&ev, &options(0))?;
        io::write_csv(
            &config.out.join(format!("riskcov_{}.csv", method.name())),
            &["coverage", "risk"],
            curve
                .coverage
                .iter()
                .zip(&curve.risk)
                .map(|(c, r)| vec![c.to_string(), r.to_string()]),
        )?;
        let aurc = metrics::aurc(curve)?;
        println!("{} AURC ({}) {:.6}", method.name(), config.metrics.risk.name(), aurc);
        by_method.insert(method.name().to_string(), json!(aurc));
        if method == config.metrics.confidence {
            metrics = m;
        }
    }
    metrics["aurc_by_method"] = Value::Object(by_method);
    io::write_json(&config.out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

/// Rows to predict on: `input` when given, else the configured test rows.
fn prediction_rows(
    config: &RunConfig,
    model: Option<&Path>,
    input: Option<&Path>,
) -> Result<(ModelBundle, Batch, u64)> {
    let (bundle, table, seed): (ModelBundle, RawTable, u64) = match input {
        Some(path) => {
            let bundle = ModelBundle::load(&model_path(config, model))?;
            (bundle, io::read_csv(path)?, config.seed)
        }
        None => {
            let inputs = Inputs::load(config)?;
            let part: Partition = pipeline::partition(config, &inputs, config.split.index)?;
            (load_model(&inputs, &model_path(config, model))?, part.test, part.seed)
        }
    };
    let (features, _) = bundle.preprocessor.transform_features(&table)?;
    Ok((bundle, features, seed))
}

/// Writes `predictions.csv` with the mean, median and spread per row.
pub fn predict(config: &RunConfig, model: Option<&Path>, input: Option<&Path>) -> Result<usize> {
    let (bundle, features, seed) = prediction_rows(config, model, input)?;
    let rows = evaluation::predict_rows(&bundle.model, &features, &config.eval_options(seed))?;
    io::write_csv(
        &config.out.join("predictions.csv"),
        &["row", "mean", "median", "std"],
        rows.iter()
            .enumerate()
            .map(|(i, (m, med, s))| vec![i.to_string(), m.to_string(), med.to_string(), s.to_string()]),
    )?;
    Ok(rows.len())
}

/// Writes `samples.csv` with `metrics.samples` draws per row in long form.
pub fn sample(config: &RunConfig, model: Option<&Path>, input: Option<&Path>) -> Result<usize> {
    let (bundle, features, seed) = prediction_rows(config, model, input)?;
    let dists = bundle.model.predict(&features)?;
    let mut out = Vec::new();
    for (i, d) in dists.iter().enumerate() {
        let draws = d.sample(config.metrics.samples, &mut evaluation::row_rng(seed, i))?;
        out.extend(
            draws
                .into_iter()
                .enumerate()
                .map(|(k, v)| vec![i.to_string(), k.to_string(), v.to_string()]),
        );
    }
    io::write_csv(&config.out.join("samples.csv"), &["row", "draw", "value"], out)?;
    Ok(dists.len())
}

fn mean_std(values: &[f64]) -> Value {
    let n = values.len() as f64;
    if values.is_empty() {
        return json!({"mean": null, "std": "NA"});
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        json!((values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        json!("NA")
    };
    json!({"mean": mean, "std": std})
}

fn format_mean_std(v: &Value) -> String {
    match (&v["mean"], &v["std"]) {
        (Value::Number(m), Value::Number(s)) => {
            format!(
                "{:.2} ± {:.2}",
                m.as_f64().unwrap_or(f64::NAN),
                s.as_f64().unwrap_or(f64::NAN)
            )
        }
        (Value::Number(m), _) => format!("{:.2} ± NA", m.as_f64().unwrap_or(f64::NAN)),
        _ => "NA".into(),
    }
}

fn run_split(config: &RunConfig, inputs: &Inputs, index: usize) -> Result<Value> {
    let started = Instant::now();
    let part = pipeline::partition(config, inputs, index)?;
    let (bundle, history) = pipeline::train_partition(&inputs.decl, &part, &config.train_config(part.seed))?;
    let opts = config.eval_options(part.seed);
    let (ev, prov) = pipeline::evaluate_table(&bundle, &part.test, &opts)?;
    let mut result = pipeline::metrics_json(&ev, &opts, &pipeline::provenance(prov, &inputs.source, &part));
    result["split"] = json!(index);
    result["best_epoch"] = json!(history.best_epoch);
    result["epochs"] = json!(history.epochs.len());
    result["best_val_nll"] = json!(history.best_val_nll);
    result["seconds"] = json!(started.elapsed().as_secs_f64());
    Ok(result)
}

/// What a stored split result must match to be reused.
fn settings(config: &RunConfig) -> Value {
    json!({
        "data": config.data,
        "split": config.split,
        "train": config.train_config(config.seed),
        "metrics": config.metrics,
    })
}

/// Runs every split, reusing results already present under `out`, and
/// writes `results.json` with per-split rows and mean ± std aggregates.
pub fn benchmark(config: &RunConfig) -> Result<Value> {
    let inputs = Inputs::load(config)?;
    let n = pipeline::partition_count(config);
    let wanted = settings(config);
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for i in 0..n {
        let path = config.out.join(format!("split_{i}")).join("result.json");
        if let Some(previous) = std::fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
            .filter(|v| v["settings"] == wanted)
        {
            println!("split {i}: reusing {}", path.display());
            completed.push(previous);
            continue;
        }
        match run_split(config, &inputs, i) {
            Ok(mut result) => {
                println!(
                    "split {i}: NLL {:.4}  RMSE {:.4}  CRPS {:.4}  ({:.1}s)",
                    result["nll"].as_f64().unwrap_or(f64::NAN),
                    result["rmse"].as_f64().unwrap_or(f64::NAN),
                    result["crps"].as_f64().unwrap_or(f64::NAN),
                    result["seconds"].as_f64().unwrap_or(f64::NAN)
                );
                result["settings"] = wanted.clone();
                io::write_json(&path, &result)?;
                completed.push(result);
            }
            Err(e) => {
                eprintln!("split {i} failed: {e}");
                failures.push(json!({"split": i, "error": e.to_string()}));
            }
        }
    }
    let column = |key: &str| -> Vec<f64> { completed.iter().filter_map(|r| r[key].as_f64()).collect() };
    let results = json!({
        "dataset": inputs.source,
        "splits_requested": n,
        "splits_completed": completed.len(),
        "partial": !failures.is_empty(),
        "nll": mean_std(&column("nll")),
        "rmse": mean_std(&column("rmse")),
        "crps": mean_std(&column("crps")),
        "per_split": completed,
        "failures": failures,
    });
    io::write_json(&config.out.join("results.json"), &results)?;
    println!(
        "NLL {}  RMSE {}  CRPS {}  ({} of {} splits)",
        format_mean_std(&results["nll"]),
        format_mean_std(&results["rmse"]),
        format_mean_std(&results["crps"]),
        results["splits_completed"],
        n
    );
    if !failures.is_empty() {
        return Err(CliError::Core(tabflow_core::Error::Structural(format!(
            "{} of {n} splits failed; partial results in {}",
            failures.len(),
            config.out.join("results.json").display()
        ))));
    }
    Ok(results)
}
