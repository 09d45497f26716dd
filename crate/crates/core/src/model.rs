//! The conditional density model: encoder, a linear conditioning head and
//! either a spline flow or a Gaussian output on standardized targets.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::encoder::{Batch, EncodeTrace, Encoder, EncoderConfig, FeatureSchema, Linear};
use crate::error::{config_err, numeric, structural, Result};
use crate::flow::{self, FlowConfig};
use crate::graph::{Graph, Mode, NodeId, ParamStore};
use crate::rng::Rng;
use crate::spline::{self, Spline};
use crate::tensor::Tensor;

/// `0.5 * ln(2 pi)`.
pub const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Log density of the standard normal.
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - HALF_LN_TWO_PI
}

/// Standard normal distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HeadKind {
    /// Stack of rational-quadratic splines pushing N(0, 1) onto the target.
    Spline,
    /// Per-row mean and log-variance of a normal.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub flow: FlowConfig,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            flow: FlowConfig::default(),
            head: HeadKind::Spline,
        }
    }
}

impl ModelConfig {
    pub fn head_width(&self) -> usize {
        match self.head {
            HeadKind::Spline => self.flow.head_width(),
            HeadKind::Gaussian => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head == HeadKind::Spline {
            if self.flow.bins == 0 || self.flow.layers == 0 {
                return Err(config_err!("the flow needs at least one bin and one layer"));
            }
            if !(self.flow.bound > 0.0 && self.flow.bound.is_finite()) {
                return Err(config_err!("tail bound must be positive, got {}", self.flow.bound));
            }
        }
        Ok(())
    }
}

/// Affine map between original and standardized target units.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetScaling {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaling {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(structural!(
                "target scaling needs finite mean and std > 0, got ({mean}, {std})"
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn restore(&self, y: f64) -> f64 {
        self.std * y + self.mean
    }
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    pub graph: Graph,
    pub head: NodeId,
    pub trace: EncodeTrace,
}

/// Loss graph for one batch: `loss` is the mean standardized NLL,
/// `per_row` the column of individual terms.
pub struct Loss {
    pub graph: Graph,
    pub loss: NodeId,
    pub per_row: NodeId,
    pub trace: EncodeTrace,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensityModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub head: Linear,
    pub scaling: TargetScaling,
    pub params: ParamStore,
}

impl DensityModel {
    /// Fresh model with a zero conditioning head: the spline variant starts
    /// as the identity flow and the Gaussian variant as N(0, 1), both in
    /// standardized units.
    pub fn new(schema: FeatureSchema, config: ModelConfig, scaling: TargetScaling, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        TargetScaling::new(scaling.mean, scaling.std)?;
        let mut params = ParamStore::new();
        let encoder = Encoder::new(schema, config.encoder, &mut params, rng)?;
        let head = Linear::zeros(&mut params, "head", encoder.output_width(), config.head_width());
        Ok(Self {
            config,
            encoder,
            head,
            scaling,
            params,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.encoder.schema
    }

    /// Encoder plus conditioning head for `batch`.
    pub fn forward(&self, batch: &Batch, mode: Mode, rng: &mut Rng) -> Result<Forward> {
        let mut graph = Graph::new();
        let (h, trace) = self.encoder.encode(&mut graph, &self.params, batch, mode, rng)?;
        let head = self.head.apply(&mut graph, &self.params, h)?;
        Ok(Forward { graph, head, trace })
    }

    /// Per-row negative log-density of standardized targets `y` given the
    /// head output, as a column node.
    pub fn standardized_nll(&self, g: &mut Graph, head: NodeId, y: &[f64]) -> Result<NodeId> {
        if let Some((r, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(numeric!("target in row {r} is not finite ({v})"));
        }
        let yn = g.constant(Tensor::column(y.to_vec()))?;
        match self.config.head {
            HeadKind::Spline => {
                let (z, lad) = flow::stack_inverse(g, head, yn, &self.config.flow)?;
                let z2 = g.square(z)?;
                let half = g.mul_scalar(z2, 0.5)?;
                let base = g.add_scalar(half, HALF_LN_TWO_PI)?;
                g.sub(base, lad)
            }
            HeadKind::Gaussian => {
                let mu = g.slice_cols(head, 0, 1)?;
                let log_var = g.slice_cols(head, 1, 2)?;
                let diff = g.sub(yn, mu)?;
                let sq = g.square(diff)?;
                let neg = g.neg(log_var)?;
                let prec = g.exp(neg)?;
                let quad = g.mul(sq, prec)?;
                let both = g.add(quad, log_var)?;
                let half = g.mul_scalar(both, 0.5)?;
                g.add_scalar(half, HALF_LN_TWO_PI)
            }
        }
    }

    /// Mean standardized NLL of `batch` with standardized targets `y`.
    pub fn loss(&self, batch: &Batch, y: &[f64], mode: Mode, rng: &mut Rng) -> Result<Loss> {
        if y.len() != batch.rows {
            return Err(structural!("{} targets for {} rows", y.len(), batch.rows));
        }
        if batch.rows == 0 {
            return Err(structural!("cannot compute a loss on an empty batch"));
        }
        let Forward { mut graph, head, trace } = self.forward(batch, mode, rng)?;
        let per_row = self.standardized_nll(&mut graph, head, y)?;
        let loss = graph.mean(per_row)?;
        Ok(Loss {
            graph,
            loss,
            per_row,
            trace,
        })
    }

    /// Eval-mode log-density of original-unit targets, one per row.
    pub fn log_density(&self, batch: &Batch, y: &[f64]) -> Result<Vec<f64>> {
        let ys: Vec<f64> = y.iter().map(|&v| self.scaling.standardize(v)).collect();
        let loss = self.loss(batch, &ys, Mode::Eval, &mut Rng::new(0))?;
        let ln_std = self.scaling.std.ln();
        Ok(loss
            .graph
            .value(loss.per_row)
            .values()
            .iter()
            .map(|nll| -nll - ln_std)
            .collect())
    }

    /// Mean original-unit NLL over a dataset in eval mode, evaluated in
    /// chunks of `chunk` rows.
    pub fn mean_nll(&self, batch: &Batch, y_standardized: &[f64], chunk: usize) -> Result<f64> {
        if batch.rows == 0 {
            return Err(structural!("cannot average over zero rows"));
        }
        let chunk = chunk.max(1);
        let mut total = 0.0;
        let mut start = 0;
        while start < batch.rows {
            let end = (start + chunk).min(batch.rows);
            let idx: Vec<usize> = (start..end).collect();
            let part = batch.select(&idx);
            let l = self.loss(&part, &y_standardized[start..end], Mode::Eval, &mut Rng::new(0))?;
            total += l.graph.value(l.per_row).values().iter().sum::<f64>();
            start = end;
        }
        Ok(total / batch.rows as f64 + self.scaling.std.ln())
    }

    /// One predictive distribution per row, in eval mode.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<PredictiveDistribution>> {
        let fwd = self.forward(batch, Mode::Eval, &mut Rng::new(0))?;
        let head = fwd.graph.value(fwd.head);
        (0..batch.rows)
            .map(|r| PredictiveDistribution::from_head(&self.config, self.scaling, head.row(r)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Splines applied to the base draw in order.
    Flow(Vec<Spline>),
    /// Standardized-unit normal parameters.
    Gaussian { mean: f64, std: f64 },
}

/// The full conditional distribution of the target for one feature row,
/// in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    pub shape: Shape,
    pub scaling: TargetScaling,
}

impl PredictiveDistribution {
    pub fn from_head(config: &ModelConfig, scaling: TargetScaling, raw: &[f64]) -> Result<Self> {
        if raw.len() != config.head_width() {
            return Err(structural!(
                "head row has {} values, expected {}",
                raw.len(),
                config.head_width()
            ));
        }
        let shape = match config.head {
            HeadKind::Spline => {
                let per = config.flow.raw_len_per_layer();
                Shape::Flow(
                    raw.chunks(per)
                        .map(|c| Spline::constrain(c, config.flow.bins, config.flow.bound))
                        .collect::<Result<_>>()?,
                )
            }
            HeadKind::Gaussian => Shape::Gaussian {
                mean: raw[0],
                std: (0.5 * raw[1]).exp(),
            },
        };
        Ok(Self { shape, scaling })
    }

    /// Maps a base draw to standardized target units.
    fn push_forward(&self, z: f64) -> Result<f64> {
        match &self.shape {
            Shape::Flow(layers) => Ok(spline::stack_forward(z, layers)?.0),
            Shape::Gaussian { mean, std } => Ok(mean + std * z),
        }
    }

    /// `(z, log|dz/dy|)` for a standardized target.
    fn pull_back(&self, y: f64) -> Result<(f64, f64)> {
        match &self.shape {
            Shape::Flow(layers) => spline::stack_inverse(y, layers),
            Shape::Gaussian { mean, std } => Ok(((y - mean) / std, -std.ln())),
        }
    }

    pub fn log_density(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(numeric!("log_density of non-finite target {y}"));
        }
        let (z, lad) = self.pull_back(self.scaling.standardize(y))?;
        Ok(std_normal_log_pdf(z) + lad - self.scaling.std.ln())
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        let (z, _) = self.pull_back(self.scaling.standardize(y))?;
        Ok(std_normal_cdf(z))
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                let z = rng.normal();
                Ok(self.scaling.restore(self.push_forward(z)?))
            })
            .collect()
    }

    /// Monte-Carlo mean of `n` draws.
    pub fn mean(&self, n: usize, rng: &mut Rng) -> Result<f64> {
        if n == 0 {
            return Err(structural!("the sample mean needs at least one draw"));
        }
        Ok(self.sample(n, rng)?.iter().sum::<f64>() / n as f64)
    }

    /// Exact median: the image of the base median.
    pub fn median(&self) -> Result<f64> {
        Ok(self.scaling.restore(self.push_forward(0.0)?))
    }

    /// Unbiased sample standard deviation of `n` draws.
    pub fn std(&self, n: usize, rng: &mut Rng) -> Result<f64> {
        if n < 2 {
            return Err(structural!("a standard deviation needs at least 2 draws, got {n}"));
        }
        Ok(sample_std(&self.sample(n, rng)?))
    }

    /// Monte-Carlo differential entropy `-(1/n) sum log p(y_s)`.
    pub fn entropy(&self, n: usize, rng: &mut Rng) -> Result<f64> {
        if n < 2 {
            return Err(structural!("entropy estimate needs at least 2 draws, got {n}"));
        }
        let mut total = 0.0;
        for _ in 0..n {
            let z = rng.normal();
            let y = self.scaling.restore(self.push_forward(z)?);
            total += self.log_density(y)?;
        }
        Ok(-total / n as f64)
    }
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `ln(2 pi e sigma^2) / 2`, the entropy of N(mu, sigma^2).
pub fn gaussian_entropy(std: f64) -> f64 {
    0.5 * (2.0 * PI * core::f64::consts::E * std * std).ln()
}
