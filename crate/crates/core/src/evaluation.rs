//! Scoring a trained model on labelled rows.

use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::encoder::Batch;
use crate::error::{structural, Result};
use crate::metrics::{self, ConfidenceMethod, RiskCoverageCurve, RiskMeasure, DECILES};
use crate::model::{sample_std, DensityModel};
use crate::rng::{streams, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalOptions {
    /// Draws per row for the mean, spread, CRPS and confidence.
    pub samples: usize,
    pub confidence: ConfidenceMethod,
    pub risk: RiskMeasure,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            confidence: ConfidenceMethod::InvStd,
            risk: RiskMeasure::Rmse,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RowPrediction {
    pub target: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub log_density: f64,
    pub crps: f64,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<RowPrediction>,
    pub nll: f64,
    pub rmse: f64,
    /// Absent when some target is too close to zero.
    pub mape: Option<f64>,
    pub crps: f64,
    /// Absent with fewer than ten rows or an undefined risk measure.
    pub curve: Option<RiskCoverageCurve>,
    pub aurc: Option<f64>,
}

/// Per-row draws for `features`; row `i` samples from its own split of the
/// sampling stream so results do not depend on evaluation order.
pub fn row_rng(seed: u64, row: usize) -> Rng {
    Rng::with_stream(seed, streams::SAMPLING).split(row as u64)
}

/// Predictions only, for rows without targets.
pub fn predict_rows(model: &DensityModel, features: &Batch, opts: &EvalOptions) -> Result<Vec<(f64, f64, f64)>> {
    if opts.samples < 2 {
        return Err(structural!("need at least 2 samples per row, got {}", opts.samples));
    }
    let dists = model.predict(features)?;
    dists
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let draws = d.sample(opts.samples, &mut row_rng(opts.seed, i))?;
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            Ok((mean, d.median()?, sample_std(&draws)))
        })
        .collect()
}

/// Scores `model` on rows with original-unit `targets`.
pub fn evaluate(model: &DensityModel, features: &Batch, targets: &[f64], opts: &EvalOptions) -> Result<Evaluation> {
    if targets.len() != features.rows || targets.is_empty() {
        return Err(structural!(
            "need one target per row (at least one), got {} for {} rows",
            targets.len(),
            features.rows
        ));
    }
    if opts.samples < 2 {
        return Err(structural!("need at least 2 samples per row, got {}", opts.samples));
    }
    let log_densities = model.log_density(features, targets)?;
    let dists = model.predict(features)?;
    let mut rows = Vec::with_capacity(targets.len());
    for (i, d) in dists.iter().enumerate() {
        let draws = d.sample(opts.samples, &mut row_rng(opts.seed, i))?;
        let n = draws.len() as f64;
        let std = sample_std(&draws);
        let confidence = match opts.confidence {
            ConfidenceMethod::InvStd => 1.0 / std,
            ConfidenceMethod::NegEntropy => {
                let mut total = 0.0;
                for &s in &draws {
                    total += d.log_density(s)?;
                }
                total / n
            }
        };
        rows.push(RowPrediction {
            target: targets[i],
            mean: draws.iter().sum::<f64>() / n,
            median: d.median()?,
            std,
            log_density: log_densities[i],
            crps: metrics::crps_sample(&draws, targets[i])?,
            confidence,
        });
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let conf: Vec<f64> = rows.iter().map(|r| r.confidence).collect();
    let curve = if rows.len() >= DECILES.len() {
        metrics::risk_curve(opts.risk, &conf, &means, targets, &DECILES).ok()
    } else {
        None
    };
    let aurc = curve.as_ref().map(metrics::aurc).transpose()?;
    Ok(Evaluation {
        nll: metrics::nll(&log_densities)?,
        rmse: metrics::rmse(&means, targets)?,
        mape: metrics::mape(&means, targets).ok(),
        crps: rows.iter().map(|r| r.crps).sum::<f64>() / rows.len() as f64,
        rows,
        curve,
        aurc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Feature, FeatureSchema};
    use crate::model::{ModelConfig, TargetScaling, HALF_LN_TWO_PI};
    use alloc::vec;

    fn setup(rows: usize) -> (DensityModel, Batch, Vec<f64>) {
        let mut rng = Rng::new(1);
        let schema = FeatureSchema::new(vec![Feature::numeric("x")]).unwrap();
        let model = DensityModel::new(
            schema,
            ModelConfig::default(),
            TargetScaling::new(4.0, 2.0).unwrap(),
            &mut rng,
        )
        .unwrap();
        let batch = Batch {
            rows,
            numeric: vec![rng.normals(rows)],
            categorical: vec![],
        };
        let y = (0..rows).map(|_| 4.0 + 2.0 * rng.normal()).collect();
        (model, batch, y)
    }

    #[test]
    fn untrained_model_scores_like_its_base() {
        let (model, batch, y) = setup(200);
        let ev = evaluate(&model, &batch, &y, &EvalOptions::default()).unwrap();
        let expected = y
            .iter()
            .map(|v| 0.5 * ((v - 4.0) / 2.0) * ((v - 4.0) / 2.0) + HALF_LN_TWO_PI + 2.0f64.ln())
            .sum::<f64>()
            / 200.0;
        assert!((ev.nll - expected).abs() < 1e-10);
        assert!(ev.rows.iter().all(|r| r.median == 4.0));
        assert_eq!(ev.curve.as_ref().unwrap().risk.len(), 10);
        assert!(ev.aurc.is_some() && ev.mape.is_some());
    }

    #[test]
    fn deterministic_and_order_free() {
        let (model, batch, y) = setup(12);
        let opts = EvalOptions {
            samples: 50,
            confidence: ConfidenceMethod::NegEntropy,
            ..EvalOptions::default()
        };
        let a = evaluate(&model, &batch, &y, &opts).unwrap();
        let b = evaluate(&model, &batch, &y, &opts).unwrap();
        assert_eq!(a, b);
        let p = predict_rows(&model, &batch, &opts).unwrap();
        assert_eq!(p[3].0, a.rows[3].mean);
    }

    #[test]
    fn small_or_zero_target_sets() {
        let (model, batch, mut y) = setup(5);
        let ev = evaluate(&model, &batch, &y, &EvalOptions::default()).unwrap();
        assert!(ev.curve.is_none() && ev.aurc.is_none());
        y[0] = 0.0;
        let ev = evaluate(&model, &batch, &y, &EvalOptions::default()).unwrap();
        assert!(ev.mape.is_none());
        assert!(evaluate(&model, &batch, &y[..2], &EvalOptions::default()).is_err());
    }
}
