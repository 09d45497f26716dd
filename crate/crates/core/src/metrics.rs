//! Point and probabilistic scores plus selective-prediction curves.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::error::{structural, Result};
use crate::model::PredictiveDistribution;
use crate::rng::Rng;

/// Targets closer to zero than this make percentage errors undefined.
pub const MAPE_MIN_TARGET: f64 = 1e-9;

/// Coverage levels, in percent, used by [`aurc`].
pub const DECILES: [f64; 10] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0];

/// Mean negative log-density.
pub fn nll(log_densities: &[f64]) -> Result<f64> {
    if log_densities.is_empty() {
        return Err(structural!("NLL of zero predictions"));
    }
    Ok(-log_densities.iter().sum::<f64>() / log_densities.len() as f64)
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(structural!(
            "need equally many predictions and targets (at least one), got {} and {}",
            pred.len(),
            target.len()
        ));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let sse: f64 = pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

/// Per-row absolute percentage errors, `100 |p - y| / |y|`.
pub fn percentage_errors(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_pair(pred, target)?;
    if let Some(i) = target.iter().position(|y| !(y.abs() > MAPE_MIN_TARGET)) {
        return Err(structural!(
            "percentage error undefined: target {i} is {} (|y| <= {MAPE_MIN_TARGET}); use a different risk measure",
            target[i]
        ));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, y)| 100.0 * (p - y).abs() / y.abs())
        .collect())
}

pub fn mape(pred: &[f64], target: &[f64]) -> Result<f64> {
    let e = percentage_errors(pred, target)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Sample CRPS in energy form,
/// `(1/S) sum |s_i - y| - (1/(2 S^2)) sum_i sum_j |s_i - s_j|`.
pub fn crps_sample(samples: &[f64], y: f64) -> Result<f64> {
    let s = samples.len();
    if s < 2 {
        return Err(structural!("CRPS needs at least 2 samples, got {s}"));
    }
    let n = s as f64;
    let first = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    // sum_{i,j} |s_i - s_j| = 2 sum_k (2k - S + 1) s_(k) over sorted samples
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pairs: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| (2.0 * k as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok(first - pairs / (2.0 * n * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConfidenceMethod {
    /// `1 / sigma` of the predictive samples.
    InvStd,
    /// Negative Monte-Carlo differential entropy.
    NegEntropy,
}

impl ConfidenceMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::InvStd => "inv_std",
            Self::NegEntropy => "neg_entropy",
        }
    }
}

impl core::str::FromStr for ConfidenceMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inv_std" => Ok(Self::InvStd),
            "neg_entropy" => Ok(Self::NegEntropy),
            other => Err(structural!("unknown confidence method {other:?}")),
        }
    }
}

/// One confidence per distribution; each uses its own split of `rng`.
pub fn confidence_scores(
    dists: &[PredictiveDistribution],
    method: ConfidenceMethod,
    n: usize,
    rng: &Rng,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(structural!("confidence estimates need n >= 2, got {n}"));
    }
    dists
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut r = rng.split(i as u64);
            match method {
                ConfidenceMethod::InvStd => Ok(1.0 / d.std(n, &mut r)?),
                ConfidenceMethod::NegEntropy => Ok(-d.entropy(n, &mut r)?),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskCoverageCurve {
    /// Coverage levels in percent, ascending, ending at 100.
    pub coverage: Vec<f64>,
    pub risk: Vec<f64>,
    pub measure: String,
}

/// Mean error of the `ceil(c N / 100)` most confident rows for every level
/// `c`. Ties in confidence keep the original order.
pub fn risk_coverage(confidences: &[f64], errors: &[f64], levels: &[f64], measure: &str) -> Result<RiskCoverageCurve> {
    let n = confidences.len();
    if n == 0 || n != errors.len() {
        return Err(structural!(
            "need equally many confidences and errors (at least one), got {n} and {}",
            errors.len()
        ));
    }
    if levels.is_empty() || n < levels.len() {
        return Err(structural!("{n} rows cannot fill {} coverage levels", levels.len()));
    }
    if levels.windows(2).any(|w| !(w[0] < w[1])) || !(levels[0] > 0.0) || levels[levels.len() - 1] != 100.0 {
        return Err(structural!(
            "coverage levels must ascend strictly within (0, 100] and end at 100"
        ));
    }
    if confidences.iter().any(|c| !c.is_finite()) {
        return Err(structural!("confidence scores must be finite"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &i in &order {
        prefix.push(prefix[prefix.len() - 1] + errors[i]);
    }
    let risk = levels
        .iter()
        .map(|&c| {
            let k = top_k(c, n);
            prefix[k] / k as f64
        })
        .collect();
    Ok(RiskCoverageCurve {
        coverage: levels.to_vec(),
        risk,
        measure: measure.into(),
    })
}

fn top_k(level: f64, n: usize) -> usize {
    let x = level * n as f64 / 100.0;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).clamp(1, n)
}

/// Error measure plotted on the risk axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum RiskMeasure {
    /// Mean absolute percentage error of the covered rows.
    Mape,
    /// Root mean squared error of the covered rows.
    Rmse,
}

impl RiskMeasure {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mape => "mape",
            Self::Rmse => "rmse",
        }
    }
}

impl core::str::FromStr for RiskMeasure {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mape" => Ok(Self::Mape),
            "rmse" => Ok(Self::Rmse),
            other => Err(structural!("unknown risk measure {other:?}")),
        }
    }
}

/// Risk-coverage curve of point predictions under `measure`. RMSE risk
/// averages squared errors over each covered prefix and takes the root.
pub fn risk_curve(
    measure: RiskMeasure,
    confidences: &[f64],
    pred: &[f64],
    target: &[f64],
    levels: &[f64],
) -> Result<RiskCoverageCurve> {
    match measure {
        RiskMeasure::Mape => {
            let e = percentage_errors(pred, target)?;
            risk_coverage(confidences, &e, levels, measure.name())
        }
        RiskMeasure::Rmse => {
            check_pair(pred, target)?;
            let e: Vec<f64> = pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).collect();
            let mut curve = risk_coverage(confidences, &e, levels, measure.name())?;
            curve.risk.iter_mut().for_each(|r| *r = r.sqrt());
            Ok(curve)
        }
    }
}

/// `(1/100) sum_{c = 20..100 step 10} (v_c + v_{c-10}) / 2 * (u_c - u_{c-10})`.
pub fn aurc(curve: &RiskCoverageCurve) -> Result<f64> {
    if curve.coverage.as_slice() != DECILES.as_slice() || curve.risk.len() != DECILES.len() {
        return Err(structural!(
            "AURC needs a curve at exactly the levels 10, 20, ..., 100, got {:?}",
            curve.coverage
        ));
    }
    let mut total = 0.0;
    for c in 1..DECILES.len() {
        total += (curve.risk[c] + curve.risk[c - 1]) / 2.0 * (curve.coverage[c] - curve.coverage[c - 1]);
    }
    Ok(total / 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_entropy, Shape, TargetScaling};
    use crate::spline::Spline;
    use alloc::vec;

    #[test]
    fn point_metrics() {
        assert_eq!(nll(&[-1.0, -1.0]).unwrap(), 1.0);
        assert!(nll(&[]).is_err());
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mape(&[110.0], &[100.0]).unwrap(), 10.0);
        assert_eq!(rmse(&[110.0], &[100.0]).unwrap(), 10.0);
        assert!(mape(&[1.0], &[0.0]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        let p = [0.3, -1.0, 4.0];
        let y = [1.0, 1.0, 1.0];
        assert!(rmse(&p, &y).unwrap() >= mae(&p, &y).unwrap());
    }

    #[test]
    fn crps_cases() {
        assert_eq!(crps_sample(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_eq!(crps_sample(&[0.0, 2.0], 1.0).unwrap(), 0.5);
        assert!(crps_sample(&[1.0], 1.0).is_err());
        // sorted closed form matches the literal double sum
        let xs = [0.3, -1.2, 2.5, 0.0, 0.9];
        let n = xs.len() as f64;
        let literal = xs.iter().map(|x| (x - 0.4).abs()).sum::<f64>() / n
            - xs.iter()
                .flat_map(|a| xs.iter().map(move |b| (a - b).abs()))
                .sum::<f64>()
                / (2.0 * n * n);
        assert!((crps_sample(&xs, 0.4).unwrap() - literal).abs() < 1e-14);
    }

    #[test]
    fn crps_of_standard_normal() {
        let xs = Rng::new(8).normals(10_000);
        let c = crps_sample(&xs, 0.0).unwrap();
        let analytic = 2.0 * (-0.918_938_533_204_672_8f64).exp() - 1.0 / core::f64::consts::PI.sqrt();
        assert!((c - analytic).abs() / analytic < 0.01, "{c}");
    }

    #[test]
    fn worked_risk_coverage_example() {
        let conf: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        let err: Vec<f64> = (1..=10).map(f64::from).collect();
        let curve = risk_coverage(&conf, &err, &DECILES, "abs").unwrap();
        assert_eq!(curve.risk, vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5]);
        assert_eq!(aurc(&curve).unwrap(), 2.925);
    }

    #[test]
    fn constant_risk() {
        let curve = risk_coverage(
            &[3.0, 1.0, 2.0, 5.0, 4.0, 0.0, 9.0, 8.0, 7.0, 6.0, 1.5],
            &[5.0; 11],
            &DECILES,
            "abs",
        )
        .unwrap();
        assert!(curve.risk.iter().all(|&r| r == 5.0));
        assert_eq!(aurc(&curve).unwrap(), 4.5);
    }

    #[test]
    fn rank_invariance_and_linearity() {
        let mut rng = Rng::new(2);
        let conf = rng.normals(37);
        let err: Vec<f64> = rng.normals(37).iter().map(|e| e.abs()).collect();
        let a = risk_coverage(&conf, &err, &DECILES, "abs").unwrap();
        let t: Vec<f64> = conf.iter().map(|c| c.exp() * 3.0 + 1.0).collect();
        let b = risk_coverage(&t, &err, &DECILES, "abs").unwrap();
        assert_eq!(a, b);
        assert_eq!(aurc(&a).unwrap(), aurc(&b).unwrap());
        let doubled = RiskCoverageCurve {
            risk: a.risk.iter().map(|r| 2.0 * r).collect(),
            ..a.clone()
        };
        assert_eq!(aurc(&doubled).unwrap(), 2.0 * aurc(&a).unwrap());
        let mean = err.iter().sum::<f64>() / 37.0;
        assert!((a.risk[9] - mean).abs() < 1e-14);
    }

    #[test]
    fn aurc_requires_deciles() {
        let c = risk_coverage(&[1.0, 2.0], &[1.0, 2.0], &[50.0, 100.0], "abs").unwrap();
        assert!(aurc(&c).is_err());
        assert!(risk_coverage(&[], &[], &DECILES, "abs").is_err());
        assert!(risk_coverage(&[1.0; 3], &[1.0; 3], &DECILES, "abs").is_err());
    }

    #[test]
    fn risk_measures() {
        let conf = [3.0, 2.0, 1.0, 0.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0];
        let y = [10.0; 10];
        let p = [11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0];
        let m = risk_curve(RiskMeasure::Mape, &conf, &p, &y, &DECILES).unwrap();
        assert_eq!(m.risk[0], 10.0);
        assert_eq!(m.risk[9], 55.0);
        let r = risk_curve(RiskMeasure::Rmse, &conf, &p, &y, &DECILES).unwrap();
        assert_eq!(r.risk[0], 1.0);
        assert_eq!(r.risk[9], rmse(&p, &y).unwrap());
        let zero = [0.0; 10];
        let msg = risk_curve(RiskMeasure::Mape, &conf, &p, &zero, &DECILES).unwrap_err();
        assert!(matches!(msg, crate::Error::Structural(m) if m.contains("risk measure")));
    }

    fn normal(std: f64) -> PredictiveDistribution {
        PredictiveDistribution {
            shape: Shape::Flow(vec![Spline::identity(8, 3.0).unwrap()]),
            scaling: TargetScaling::new(0.0, std).unwrap(),
        }
    }

    #[test]
    fn confidence_scores_follow_spread() {
        let rng = Rng::new(5);
        let s = confidence_scores(&[normal(2.0)], ConfidenceMethod::InvStd, 1000, &rng).unwrap();
        assert!((s[0] - 0.5).abs() < 0.03, "{}", s[0]);
        let h = confidence_scores(&[normal(1.0)], ConfidenceMethod::NegEntropy, 10_000, &Rng::new(6)).unwrap();
        assert!((h[0] + gaussian_entropy(1.0)).abs() < 0.02, "{}", h[0]);
        for m in [ConfidenceMethod::InvStd, ConfidenceMethod::NegEntropy] {
            let s = confidence_scores(&[normal(0.5), normal(3.0)], m, 1000, &rng).unwrap();
            assert!(s[0] > s[1]);
        }
        assert!(confidence_scores(&[normal(1.0)], ConfidenceMethod::InvStd, 1, &rng).is_err());
    }
}
