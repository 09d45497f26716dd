//! Random hyperparameter search.
//!
//! Each trial draws, independently and uniformly:
//!
//! | parameter | range |
//! |---|---|
//! | `embedding_dim` | {4, 8, 16, 32, 64} |
//! | `blocks` | 1..=8 |
//! | `hidden_multiplier` | [1, 4] |
//! | `dropout` | [0, 0.5] |
//! | `bins` | 4..=16 |
//! | `bound` | [2, 5] |
//! | `layers` | 1..=3 |
//! | `learning_rate` | log-uniform on [1e-4, 1e-2] |
//!
//! The head kind and numeric embedding are kept from the configuration.

use serde::{Deserialize, Serialize};
use tabflow_core::data::Preprocessor;
use tabflow_core::rng::{streams, Rng};
use tabflow_core::train;

use crate::config::{ModelSection, RunConfig};
use crate::error::{CliError, Result};
use crate::io;
use crate::pipeline::{self, Inputs};

const EMBEDDING_DIMS: [usize; 5] = [4, 8, 16, 32, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub model: ModelSection,
    pub learning_rate: f64,
    pub val_nll: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

/// Draws one trial's hyperparameters on top of `base`.
pub fn sample_trial(rng: &mut Rng, base: &ModelSection) -> (ModelSection, f64) {
    let model = ModelSection {
        embedding_dim: EMBEDDING_DIMS[rng.below(EMBEDDING_DIMS.len())],
        blocks: rng.int_range(1, 8) as usize,
        hidden_multiplier: rng.uniform_range(1.0, 4.0),
        dropout: rng.uniform_range(0.0, 0.5),
        bins: rng.int_range(4, 16) as usize,
        bound: rng.uniform_range(2.0, 5.0),
        layers: rng.int_range(1, 3) as usize,
        ..base.clone()
    };
    let learning_rate = 10f64.powf(rng.uniform_range(-4.0, -2.0));
    (model, learning_rate)
}

/// Runs `tune.budget` trials on the configured split with the epoch cap
/// `tune.max_epochs`; writes `trials.jsonl` and `best_config.toml` and
/// returns the best configuration with its validation NLL.
pub fn tune(config: &RunConfig) -> Result<(RunConfig, f64, Vec<Trial>)> {
    let inputs = Inputs::load(config)?;
    let part = pipeline::partition(config, &inputs, config.split.index)?;
    let preprocessor = Preprocessor::fit(&part.train, &inputs.decl)?;
    let tr = preprocessor.transform(&part.train)?;
    let va = preprocessor.transform(&part.validation)?;
    let base = Rng::with_stream(config.seed, streams::TUNER);

    let mut trials = Vec::with_capacity(config.tune.budget);
    let mut best: Option<(RunConfig, f64)> = None;
    for t in 0..config.tune.budget {
        let (model, learning_rate) = sample_trial(&mut base.split(t as u64), &config.model);
        let mut candidate = config.clone();
        candidate.model = model.clone();
        candidate.train.learning_rate = learning_rate;
        let mut train_config = candidate.train_config(part.seed);
        train_config.max_epochs = config.tune.max_epochs;
        let outcome = train::train(&tr, &va, preprocessor.target, &train_config);
        let trial = match &outcome {
            Ok((_, h)) => Trial {
                trial: t,
                model,
                learning_rate,
                val_nll: Some(h.best_val_nll),
                epochs: h.epochs.len(),
                error: None,
            },
            Err(e) => Trial {
                trial: t,
                model,
                learning_rate,
                val_nll: None,
                epochs: 0,
                error: Some(e.to_string()),
            },
        };
        match trial.val_nll {
            Some(v) => println!("trial {t}: validation NLL {v:.4}"),
            None => println!("trial {t}: failed: {}", trial.error.as_deref().unwrap_or_default()),
        }
        if let Some(v) = trial.val_nll.filter(|v| v.is_finite()) {
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((candidate, v));
            }
        }
        trials.push(trial);
    }

    let log: String = trials
        .iter()
        .map(|t| serde_json::to_string(t).expect("plain data serializes") + "\n")
        .collect();
    io::write_text(&config.out.join("trials.jsonl"), &log)?;
    let Some((best, nll)) = best else {
        let diagnostics: Vec<String> = trials
            .iter()
            .map(|t| format!("trial {}: {}", t.trial, t.error.as_deref().unwrap_or("non-finite NLL")))
            .collect();
        return Err(CliError::Core(tabflow_core::Error::Structural(format!(
            "all {} trials failed:\n{}",
            trials.len(),
            diagnostics.join("\n")
        ))));
    };
    io::write_text(&config.out.join("best_config.toml"), &best.to_toml())?;
    println!("best validation NLL {nll:.4}");
    Ok((best, nll, trials))
}
