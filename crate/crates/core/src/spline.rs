//! Monotonic rational-quadratic splines on `[-B, B]` with identity tails.
//!
//! A spline with `M` bins is described by `M + 1` knots `(x_m, y_m)` and
//! positive knot derivatives `d_m`. Inside bin `m`, with `w = x_{m+1} - x_m`,
//! `h = y_{m+1} - y_m`, slope `s = h / w` and `t = (z - x_m) / w`:
//!
//! ```text
//! f(z)  = y_m + h (s t^2 + d_m t (1 - t)) / (s + (d_{m+1} + d_m - 2 s) t (1 - t))
//! f'(z) = s^2 (d_{m+1} t^2 + 2 s t (1 - t) + d_m (1 - t)^2) / (s + (d_{m+1} + d_m - 2 s) t (1 - t))^2
//! ```
//!
//! Outside `[-B, B]` the map is the identity. The boundary derivatives are
//! pinned to one so the transform is C¹ across `±B`.

use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::error::{config_err, numeric, structural, Result};
use crate::graph::softplus;

/// Lower bound on every bin width and height, as a fraction of `2B`.
pub const MIN_BIN_FRACTION: f64 = 1e-3;
/// Lower bound on every knot derivative.
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Offset added to derivative logits so a zero logit maps to a derivative
/// of exactly one: `MIN_DERIVATIVE + softplus(DERIVATIVE_OFFSET) = 1`.
pub fn derivative_offset() -> f64 {
    ((1.0 - MIN_DERIVATIVE).exp() - 1.0).ln()
}

/// Number of unconstrained values per spline layer: `M` width logits, `M`
/// height logits and `M - 1` interior derivative logits.
pub const fn raw_len(bins: usize) -> usize {
    3 * bins - 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spline {
    bound: f64,
    knot_x: Vec<f64>,
    knot_y: Vec<f64>,
    derivatives: Vec<f64>,
}

/// Bin fractions `eps + (1 - M eps) softmax(logits)`; sums to one.
pub(crate) fn bin_fractions(logits: &[f64]) -> Vec<f64> {
    let m = logits.len() as f64;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter()
        .map(|e| (e / total) * (1.0 - m * MIN_BIN_FRACTION) + MIN_BIN_FRACTION)
        .collect()
}

/// Knot positions from bin fractions, pinned to `-bound` and `bound`.
pub(crate) fn knots(fractions: &[f64], bound: f64) -> Vec<f64> {
    let m = fractions.len();
    let mut out = Vec::with_capacity(m + 1);
    out.push(-bound);
    let mut acc = 0.0;
    for &f in &fractions[..m - 1] {
        acc += f;
        out.push(-bound + 2.0 * bound * acc);
    }
    out.push(bound);
    out
}

/// Rational-quadratic piece of one bin at relative position `t`.
/// Returns the value and the derivative with respect to `z`.
#[inline]
fn rq_piece(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, z: f64) -> (f64, f64) {
    let w = x1 - x0;
    let h = y1 - y0;
    let s = h / w;
    let t = (z - x0) / w;
    let tt = t * (1.0 - t);
    let den = s + (d1 + d0 - 2.0 * s) * tt;
    let value = y0 + h * (s * t * t + d0 * tt) / den;
    let deriv = s * s * (d1 * t * t + 2.0 * s * tt + d0 * (1.0 - t) * (1.0 - t)) / (den * den);
    (value, deriv)
}

/// Index `m` with `knots[m] <= v < knots[m + 1]`, clamped to the last bin.
fn locate(knots: &[f64], v: f64) -> usize {
    let m = knots.len() - 1;
    knots[1..m].partition_point(|&k| k <= v)
}

impl Spline {
    /// Maps `3M - 1` unconstrained values to a valid spline.
    pub fn constrain(raw: &[f64], bins: usize, bound: f64) -> Result<Self> {
        if bins == 0 {
            return Err(config_err!("spline needs at least one bin"));
        }
        if bins as f64 * MIN_BIN_FRACTION >= 1.0 {
            return Err(config_err!(
                "{bins} bins with minimum fraction {MIN_BIN_FRACTION} leave no free mass"
            ));
        }
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(config_err!("tail bound must be positive and finite, got {bound}"));
        }
        if raw.len() != raw_len(bins) {
            return Err(structural!(
                "spline with {bins} bins needs {} raw values, got {}",
                raw_len(bins),
                raw.len()
            ));
        }
        if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
            return Err(numeric!("non-finite raw spline parameter {v}"));
        }
        let knot_x = knots(&bin_fractions(&raw[..bins]), bound);
        let knot_y = knots(&bin_fractions(&raw[bins..2 * bins]), bound);
        let offset = derivative_offset();
        let mut derivatives = Vec::with_capacity(bins + 1);
        derivatives.push(1.0);
        derivatives.extend(raw[2 * bins..].iter().map(|&l| softplus(l + offset) + MIN_DERIVATIVE));
        derivatives.push(1.0);
        Ok(Self {
            bound,
            knot_x,
            knot_y,
            derivatives,
        })
    }

    /// The identity spline: uniform bins and unit derivatives.
    pub fn identity(bins: usize, bound: f64) -> Result<Self> {
        Self::constrain(&alloc::vec![0.0; raw_len(bins)], bins, bound)
    }

    /// Builds a spline from explicit knots, checking every invariant.
    pub fn from_knots(knot_x: Vec<f64>, knot_y: Vec<f64>, derivatives: Vec<f64>) -> Result<Self> {
        let n = knot_x.len();
        if n < 2 || knot_y.len() != n || derivatives.len() != n {
            return Err(structural!(
                "need matching knot vectors of length >= 2, got {}, {}, {}",
                n,
                knot_y.len(),
                derivatives.len()
            ));
        }
        let bound = knot_x[n - 1];
        let s = Self {
            bound,
            knot_x,
            knot_y,
            derivatives,
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks anchoring, strict monotonicity, minimum bin sizes and
    /// derivative bounds.
    pub fn validate(&self) -> Result<()> {
        let b = self.bound;
        let m = self.bins();
        let min_size = 2.0 * b * MIN_BIN_FRACTION * (1.0 - 1e-9);
        if self.knot_x[0] != -b || self.knot_y[0] != -b || self.knot_x[m] != b || self.knot_y[m] != b {
            return Err(structural!("spline knots must start at -{b} and end at {b}"));
        }
        for i in 0..m {
            let w = self.knot_x[i + 1] - self.knot_x[i];
            let h = self.knot_y[i + 1] - self.knot_y[i];
            if !(w >= min_size) || !(h >= min_size) {
                return Err(structural!("bin {i} has width {w} / height {h} below {min_size}"));
            }
        }
        if self.derivatives[0] != 1.0 || self.derivatives[m] != 1.0 {
            return Err(structural!("boundary derivatives must be exactly 1"));
        }
        if let Some(d) = self
            .derivatives
            .iter()
            .find(|&&d| !(d >= MIN_DERIVATIVE) || !d.is_finite())
        {
            return Err(structural!("knot derivative {d} below {MIN_DERIVATIVE}"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.knot_x.len() - 1
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn knot_x(&self) -> &[f64] {
        &self.knot_x
    }

    pub fn knot_y(&self) -> &[f64] {
        &self.knot_y
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.derivatives
    }

    /// Evaluates the rational-quadratic piece of `bin` at `z` without any
    /// bin lookup; `z` may lie outside the bin.
    pub fn evaluate_in_bin(&self, bin: usize, z: f64) -> (f64, f64) {
        rq_piece(
            self.knot_x[bin],
            self.knot_x[bin + 1],
            self.knot_y[bin],
            self.knot_y[bin + 1],
            self.derivatives[bin],
            self.derivatives[bin + 1],
            z,
        )
    }

    /// `z -> (f(z), log |f'(z)|)`.
    pub fn forward(&self, z: f64) -> Result<(f64, f64)> {
        if !z.is_finite() {
            return Err(numeric!("spline forward of non-finite input {z}"));
        }
        if z.abs() > self.bound {
            return Ok((z, 0.0));
        }
        let (y, d) = self.evaluate_in_bin(locate(&self.knot_x, z), z);
        Ok((y, d.ln()))
    }

    /// `y -> (f^{-1}(y), log |d f^{-1}/dy|)`.
    pub fn inverse(&self, y: f64) -> Result<(f64, f64)> {
        if !y.is_finite() {
            return Err(numeric!("spline inverse of non-finite input {y}"));
        }
        if y.abs() > self.bound {
            return Ok((y, 0.0));
        }
        let m = locate(&self.knot_y, y);
        let (x0, x1) = (self.knot_x[m], self.knot_x[m + 1]);
        let (y0, y1) = (self.knot_y[m], self.knot_y[m + 1]);
        let (d0, d1) = (self.derivatives[m], self.derivatives[m + 1]);
        let w = x1 - x0;
        let h = y1 - y0;
        let s = h / w;
        let dy = y - y0;
        let t = d1 + d0 - 2.0 * s;
        let a = h * (s - d0) + dy * t;
        let b = h * d0 - dy * t;
        let c = -s * dy;
        let disc = b * b - 4.0 * a * c;
        if disc < -1e-12 {
            return Err(numeric!(
                "negative discriminant {disc} inverting spline at {y} (bin {m})"
            ));
        }
        let root = 2.0 * c / (-b - disc.max(0.0).sqrt());
        let frac = root.clamp(0.0, 1.0);
        let z = frac * w + x0;
        let (_, deriv) = self.evaluate_in_bin(m, z);
        Ok((z, -deriv.ln()))
    }
}

/// Applies `layers` in order, accumulating log-determinants.
pub fn stack_forward(value: f64, layers: &[Spline]) -> Result<(f64, f64)> {
    if layers.is_empty() {
        return Err(structural!("flow stack needs at least one layer"));
    }
    layers.iter().try_fold((value, 0.0), |(v, lad), layer| {
        let (out, l) = layer.forward(v)?;
        Ok((out, lad + l))
    })
}

/// Inverts [`stack_forward`]: layers are undone last-to-first.
pub fn stack_inverse(value: f64, layers: &[Spline]) -> Result<(f64, f64)> {
    if layers.is_empty() {
        return Err(structural!("flow stack needs at least one layer"));
    }
    layers.iter().rev().try_fold((value, 0.0), |(v, lad), layer| {
        let (out, l) = layer.inverse(v)?;
        Ok((out, lad + l))
    })
}
