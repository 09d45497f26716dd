//! TOML run configuration. Every key except the data and schema paths has
//! a default; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tabflow_core::data::parse_date;
use tabflow_core::encoder::{EncoderConfig, NumericEmbedding};
use tabflow_core::evaluation::EvalOptions;
use tabflow_core::flow::FlowConfig;
use tabflow_core::metrics::{ConfidenceMethod, RiskMeasure};
use tabflow_core::model::{HeadKind, ModelConfig};
use tabflow_core::train::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub tune: TuneSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV file; relative paths are resolved against the config file.
    pub path: PathBuf,
    /// `column: role` declaration, resolved like `path`.
    pub schema: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Repeated random holdout.
    Cv,
    /// Cut by a date column.
    Chrono,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub kind: SplitKind,
    /// Number of random splits run by `benchmark`.
    pub splits: usize,
    /// Split used by the single-model commands.
    pub index: usize,
    pub test_fraction: f64,
    /// Share of the non-test rows used for validation.
    pub val_fraction: f64,
    pub column: Option<String>,
    pub train_end: Option<String>,
    pub val_end: Option<String>,
    pub test_end: Option<String>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            kind: SplitKind::Cv,
            splits: 1,
            index: 0,
            test_fraction: 0.1,
            val_fraction: 0.1,
            column: None,
            train_end: None,
            val_end: None,
            test_end: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub head: HeadKind,
    pub embedding_dim: usize,
    pub blocks: usize,
    pub hidden_multiplier: f64,
    pub dropout: f64,
    pub numeric_embedding: NumericEmbedding,
    pub bins: usize,
    pub bound: f64,
    pub layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self::from_config(&ModelConfig::default())
    }
}

impl ModelSection {
    pub fn from_config(c: &ModelConfig) -> Self {
        Self {
            head: c.head,
            embedding_dim: c.encoder.embedding_dim,
            blocks: c.encoder.blocks,
            hidden_multiplier: c.encoder.hidden_multiplier,
            dropout: c.encoder.dropout,
            numeric_embedding: c.encoder.numeric_embedding,
            bins: c.flow.bins,
            bound: c.flow.bound,
            layers: c.flow.layers,
        }
    }

    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                embedding_dim: self.embedding_dim,
                blocks: self.blocks,
                hidden_multiplier: self.hidden_multiplier,
                dropout: self.dropout,
                numeric_embedding: self.numeric_embedding,
            },
            flow: FlowConfig {
                bins: self.bins,
                bound: self.bound,
                layers: self.layers,
            },
            head: self.head,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Draws per row for point predictions, CRPS and confidences.
    pub samples: usize,
    pub confidence: ConfidenceMethod,
    pub risk: RiskMeasure,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let e = EvalOptions::default();
        Self {
            samples: e.samples,
            confidence: e.confidence,
            risk: e.risk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub budget: usize,
    /// Epoch cap for each trial.
    pub max_epochs: usize,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            budget: 20,
            max_epochs: 100,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and resolves the data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| CliError::input(path, e.message()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.data.path = base.join(&config.data.path);
        config.data.schema = base.join(&config.data.schema);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.split;
        let bad = |m: String| Err(CliError::Config(m));
        match s.kind {
            SplitKind::Cv => {
                if s.splits == 0 {
                    return bad("split.splits must be at least 1".into());
                }
                if s.index >= s.splits {
                    return bad(format!(
                        "split.index {} must be below split.splits {}",
                        s.index, s.splits
                    ));
                }
                for (name, f) in [("test_fraction", s.test_fraction), ("val_fraction", s.val_fraction)] {
                    if !(f > 0.0 && f < 1.0) {
                        return bad(format!("split.{name} must lie in (0, 1), got {f}"));
                    }
                }
            }
            SplitKind::Chrono => {
                if s.column.is_none() {
                    return bad("chronological splits need split.column".into());
                }
                for (name, v) in [
                    ("train_end", &s.train_end),
                    ("val_end", &s.val_end),
                    ("test_end", &s.test_end),
                ] {
                    match v {
                        None => return bad(format!("chronological splits need split.{name}")),
                        Some(d) => {
                            parse_date(d).map_err(|e| CliError::Config(format!("split.{name}: {e}")))?;
                        }
                    }
                }
            }
        }
        if self.metrics.samples < 2 {
            return bad(format!(
                "metrics.samples must be at least 2, got {}",
                self.metrics.samples
            ));
        }
        if self.tune.budget == 0 || self.tune.max_epochs == 0 {
            return bad("tune.budget and tune.max_epochs must be at least 1".into());
        }
        self.train_config(self.seed)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            learning_rate: self.train.learning_rate,
            seed,
            validation_fraction: self.split.val_fraction,
            model: self.model.to_config(),
        }
    }

    pub fn eval_options(&self, seed: u64) -> EvalOptions {
        EvalOptions {
            samples: self.metrics.samples,
            confidence: self.metrics.confidence,
            risk: self.metrics.risk,
            seed,
        }
    }
}
