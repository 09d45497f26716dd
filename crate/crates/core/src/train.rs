//! Mini-batch maximum-likelihood training with early stopping.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::data::TabularDataset;
use crate::error::{config_err, structural, Error, Result};
use crate::graph::Mode;
use crate::model::{DensityModel, ModelConfig, TargetScaling};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{streams, Rng};

/// Rows per eval-mode chunk when scoring a whole dataset.
pub const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Clamped to the number of training rows.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of the non-test rows held out for validation.
    pub validation_fraction: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            max_epochs: 500,
            patience: 20,
            learning_rate: 1e-3,
            seed: 0,
            validation_fraction: 0.1,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(config_err!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.patience < 1 {
            return Err(config_err!("patience must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(config_err!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        self.model.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training NLL in original units (train mode, as optimized).
    pub train_nll: f64,
    /// Validation NLL in original units (eval mode).
    pub val_nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
}

/// Shuffled mini-batches; a trailing batch of one row is folded into its
/// predecessor because batch normalization needs two rows.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let size = batch_size.clamp(1, n.max(1));
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches[batches.len() - 1].len() == 1 {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

fn with_context(e: Error, context: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{context}: {m}")),
        Error::Structural(m) => Error::Structural(format!("{context}: {m}")),
        other => other,
    }
}

/// Fits a fresh model on `train`, selecting the epoch with the lowest
/// validation NLL. Targets of both datasets are in standardized units.
pub fn train(
    train: &TabularDataset,
    validation: &TabularDataset,
    scaling: TargetScaling,
    config: &TrainConfig,
) -> Result<(DensityModel, History)> {
    config.validate()?;
    if train.len() < 2 {
        return Err(structural!("need at least 2 training rows, got {}", train.len()));
    }
    if validation.is_empty() {
        return Err(structural!("need at least one validation row"));
    }
    let mut init = Rng::with_stream(config.seed, streams::INIT);
    let model = DensityModel::new(train.schema.clone(), config.model, scaling, &mut init)?;
    fit(model, train, validation, config)
}

/// Continues training `model` in place of a fresh initialization.
pub fn fit(
    mut model: DensityModel,
    train: &TabularDataset,
    validation: &TabularDataset,
    config: &TrainConfig,
) -> Result<(DensityModel, History)> {
    config.validate()?;
    if train.len() < 2 {
        return Err(structural!("need at least 2 training rows, got {}", train.len()));
    }
    let mut shuffle = Rng::with_stream(config.seed, streams::SHUFFLE);
    let mut dropout = Rng::with_stream(config.seed, streams::DROPOUT);
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let ln_std = model.scaling.std.ln();
    let mut history = History {
        best_val_nll: f64::INFINITY,
        ..History::default()
    };
    let mut best = model.clone();
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        let mut total = 0.0;
        for (b, idx) in minibatches(train.len(), config.batch_size, &mut shuffle)
            .into_iter()
            .enumerate()
        {
            let batch = train.features.select(&idx);
            let y: Vec<f64> = idx.iter().map(|&i| train.targets[i]).collect();
            let mut step = || -> Result<f64> {
                let loss = model.loss(&batch, &y, Mode::Train, &mut dropout)?;
                let grads = loss.graph.backward(loss.loss)?.for_store(&model.params);
                adam.step(&mut model.params, &grads)?;
                model.encoder.update_running_stats(&loss.graph, &loss.trace);
                Ok(loss.graph.value(loss.loss).values()[0])
            };
            let value = step().map_err(|e| with_context(e, &format!("epoch {epoch}, batch {b}")))?;
            total += value * idx.len() as f64;
        }
        let train_nll = total / train.len() as f64 + ln_std;
        let val_nll = model
            .mean_nll(&validation.features, &validation.targets, EVAL_CHUNK)
            .map_err(|e| with_context(e, &format!("epoch {epoch}, validation")))?;
        history.epochs.push(EpochRecord {
            epoch,
            train_nll,
            val_nll,
        });
        if val_nll < history.best_val_nll {
            history.best_val_nll = val_nll;
            history.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if history.epochs.is_empty() {
        return Err(config_err!("max_epochs must be at least 1"));
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::encoder::{Batch, EncoderConfig, Feature, FeatureSchema};
    use crate::flow::FlowConfig;
    use alloc::string::ToString;
    use alloc::vec;

    fn dataset(rng: &mut Rng, n: usize, f: impl Fn(f64, &mut Rng) -> f64) -> TabularDataset {
        let x = rng.normals(n);
        let targets = x.iter().map(|&v| f(v, rng)).collect();
        TabularDataset {
            features: Batch {
                rows: n,
                numeric: vec![x],
                categorical: vec![],
            },
            targets,
            schema: FeatureSchema::new(vec![Feature::numeric("x")]).unwrap(),
            provenance: Provenance::default(),
        }
    }

    fn tiny(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            max_epochs: epochs,
            patience: 5,
            learning_rate: 1e-2,
            model: ModelConfig {
                encoder: EncoderConfig {
                    embedding_dim: 4,
                    blocks: 1,
                    ..EncoderConfig::default()
                },
                flow: FlowConfig {
                    bins: 6,
                    ..FlowConfig::default()
                },
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn minibatches_cover_all_rows_without_singletons() {
        let mut rng = Rng::new(1);
        for (n, b) in [(10, 3), (9, 4), (5, 2048), (7, 2)] {
            let batches = minibatches(n, b, &mut rng);
            let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(batches.iter().all(|x| x.len() >= 2), "{n} {b}: {batches:?}");
        }
    }

    #[test]
    fn learns_a_shifted_target_and_keeps_best_epoch() {
        let mut rng = Rng::new(2);
        let tr = dataset(&mut rng, 256, |x, r| 0.8 * x + 0.3 * r.normal());
        let va = dataset(&mut rng, 64, |x, r| 0.8 * x + 0.3 * r.normal());
        let (model, hist) = train(&tr, &va, TargetScaling::identity(), &tiny(40)).unwrap();
        let first = hist.epochs[0].val_nll;
        assert!(hist.best_val_nll < first - 0.3, "{hist:?}");
        let again = model.mean_nll(&va.features, &va.targets, EVAL_CHUNK).unwrap();
        assert_eq!(again, hist.best_val_nll);
        let min = hist.epochs.iter().map(|e| e.val_nll).fold(f64::INFINITY, f64::min);
        assert_eq!(min, hist.best_val_nll);
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = Rng::new(3);
        let tr = dataset(&mut rng, 64, |x, _| x);
        let va = dataset(&mut rng, 16, |x, _| x);
        let a = train(&tr, &va, TargetScaling::identity(), &tiny(3)).unwrap();
        let b = train(&tr, &va, TargetScaling::identity(), &tiny(3)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn huge_learning_rate_terminates() {
        let mut rng = Rng::new(4);
        let tr = dataset(&mut rng, 64, |x, r| x + r.normal());
        let va = dataset(&mut rng, 16, |x, r| x + r.normal());
        let cfg = TrainConfig {
            patience: 1,
            learning_rate: 1e3,
            max_epochs: 10_000,
            ..tiny(0)
        };
        match train(&tr, &va, TargetScaling::identity(), &cfg) {
            Ok((_, h)) => assert!(h.epochs.len() < 10_000),
            Err(e) => assert!(e.to_string().contains("epoch"), "{e}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = Rng::new(5);
        let tr = dataset(&mut rng, 1, |x, _| x);
        let va = dataset(&mut rng, 4, |x, _| x);
        assert!(matches!(
            train(&tr, &va, TargetScaling::identity(), &tiny(1)),
            Err(Error::Structural(_))
        ));
        let tr = dataset(&mut rng, 8, |x, _| x);
        let empty = va.select(&[]);
        assert!(train(&tr, &empty, TargetScaling::identity(), &tiny(1)).is_err());
        let bad = TrainConfig {
            batch_size: 1,
            ..tiny(1)
        };
        assert!(matches!(
            train(&tr, &va, TargetScaling::identity(), &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_targets_report_epoch_and_row() {
        let mut rng = Rng::new(6);
        let mut tr = dataset(&mut rng, 8, |x, _| x);
        tr.targets[3] = f64::NAN;
        let va = dataset(&mut rng, 4, |x, _| x);
        let msg = train(&tr, &va, TargetScaling::identity(), &tiny(1))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("epoch 0") && msg.contains("row"), "{msg}");
    }
}
