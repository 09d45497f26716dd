//! Differentiable spline inversion on the autodiff graph.
//!
//! Mirrors [`Spline::constrain`](crate::spline::Spline::constrain) and
//! [`Spline::inverse`](crate::spline::Spline::inverse) op-for-op so the
//! training loss and the scalar evaluation path agree to rounding.

use alloc::vec::Vec;

use crate::error::{numeric, structural, Result};
use crate::graph::{Graph, NodeId};
use crate::spline::{derivative_offset, raw_len, MIN_BIN_FRACTION, MIN_DERIVATIVE};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowConfig {
    /// Bins per spline (`M`).
    pub bins: usize,
    /// Tail bound (`B`); the flow is the identity outside `[-B, B]`.
    pub bound: f64,
    /// Number of stacked spline layers.
    pub layers: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            bound: 3.0,
            layers: 1,
        }
    }
}

impl FlowConfig {
    pub fn raw_len_per_layer(&self) -> usize {
        raw_len(self.bins)
    }

    pub fn head_width(&self) -> usize {
        self.layers * raw_len(self.bins)
    }
}

struct Constrained {
    knot_x: NodeId,
    knot_y: NodeId,
    derivatives: NodeId,
}

fn constrain(g: &mut Graph, raw: NodeId, bins: usize, bound: f64) -> Result<Constrained> {
    let fractions = |g: &mut Graph, start: usize| -> Result<NodeId> {
        let logits = g.slice_cols(raw, start, start + bins)?;
        let soft = g.softmax_rows(logits)?;
        let scaled = g.mul_scalar(soft, 1.0 - bins as f64 * MIN_BIN_FRACTION)?;
        g.add_scalar(scaled, MIN_BIN_FRACTION)
    };
    let wf = fractions(g, 0)?;
    let knot_x = g.knots_from_bins(wf, bound)?;
    let hf = fractions(g, bins)?;
    let knot_y = g.knots_from_bins(hf, bound)?;

    let dl = g.slice_cols(raw, 2 * bins, raw_len(bins))?;
    let shifted = g.add_scalar(dl, derivative_offset())?;
    let sp = g.softplus(shifted)?;
    let interior = g.add_scalar(sp, MIN_DERIVATIVE)?;
    let derivatives = g.pad_cols(interior, 1, 1, 1.0)?;
    Ok(Constrained {
        knot_x,
        knot_y,
        derivatives,
    })
}

/// Inverse of one spline layer for a batch. `raw` is `rows x (3M - 1)`,
/// `y` is a `rows x 1` column. Returns `(z, log|dz/dy|)`, both columns.
pub fn spline_inverse(g: &mut Graph, raw: NodeId, y: NodeId, bins: usize, bound: f64) -> Result<(NodeId, NodeId)> {
    let rows = g.value(raw).rows();
    if g.value(raw).cols() != raw_len(bins) || g.value(y).len() != rows {
        return Err(structural!(
            "spline_inverse: raw {:?} / targets {:?} do not match {bins} bins",
            g.value(raw).shape(),
            g.value(y).shape()
        ));
    }
    let c = constrain(g, raw, bins, bound)?;

    let inside: Vec<bool> = g.value(y).values().iter().map(|v| v.abs() <= bound).collect();
    let yc = g.clamp(y, -bound, bound)?;
    let bin: Vec<usize> = {
        let ky = g.value(c.knot_y);
        g.value(yc)
            .values()
            .iter()
            .enumerate()
            .map(|(r, &v)| ky.row(r)[1..bins].partition_point(|&k| k <= v))
            .collect()
    };
    let next: Vec<usize> = bin.iter().map(|b| b + 1).collect();

    let x0 = g.gather_cols(c.knot_x, bin.clone())?;
    let x1 = g.gather_cols(c.knot_x, next.clone())?;
    let y0 = g.gather_cols(c.knot_y, bin.clone())?;
    let y1 = g.gather_cols(c.knot_y, next.clone())?;
    let d0 = g.gather_cols(c.derivatives, bin)?;
    let d1 = g.gather_cols(c.derivatives, next)?;

    let w = g.sub(x1, x0)?;
    let h = g.sub(y1, y0)?;
    let s = g.div(h, w)?;
    let dy = g.sub(yc, y0)?;
    let two_s = g.mul_scalar(s, 2.0)?;
    let dsum = g.add(d1, d0)?;
    let t = g.sub(dsum, two_s)?;

    // a = h (s - d0) + dy t ; b = h d0 - dy t ; c = -s dy
    let s_minus_d0 = g.sub(s, d0)?;
    let a1 = g.mul(h, s_minus_d0)?;
    let dyt = g.mul(dy, t)?;
    let a = g.add(a1, dyt)?;
    let hd0 = g.mul(h, d0)?;
    let b = g.sub(hd0, dyt)?;
    let sdy = g.mul(s, dy)?;
    let cc = g.neg(sdy)?;

    let b2 = g.square(b)?;
    let ac = g.mul(a, cc)?;
    let ac4 = g.mul_scalar(ac, 4.0)?;
    let disc = g.sub(b2, ac4)?;
    if let Some((r, v)) = g.value(disc).values().iter().enumerate().find(|(_, &v)| v < -1e-12) {
        return Err(numeric!("negative discriminant {v} inverting spline for row {r}"));
    }
    let disc = g.clamp(disc, 0.0, f64::MAX)?;
    let root = g.sqrt(disc)?;
    let nb = g.neg(b)?;
    let den = g.sub(nb, root)?;
    let num = g.mul_scalar(cc, 2.0)?;
    let frac = g.div(num, den)?;
    let frac = g.clamp(frac, 0.0, 1.0)?;
    let zw = g.mul(frac, w)?;
    let z_in = g.add(zw, x0)?;

    // the forward derivative evaluated at the recovered point
    let xi = g.sub(z_in, x0)?;
    let tq = g.div(xi, w)?;
    let one_minus = g.neg(tq)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let t2 = g.square(tq)?;
    let om2 = g.square(one_minus)?;
    let tt = g.mul(tq, one_minus)?;
    let term1 = g.mul(d1, t2)?;
    let st = g.mul(two_s, tt)?;
    let term3 = g.mul(d0, om2)?;
    let inner = g.add(term1, st)?;
    let inner = g.add(inner, term3)?;
    let s2 = g.square(s)?;
    let numer = g.mul(s2, inner)?;
    let ttt = g.mul(t, tt)?;
    let denom = g.add(s, ttt)?;
    let log_num = g.log(numer)?;
    let log_den = g.log(denom)?;
    let log_den2 = g.mul_scalar(log_den, 2.0)?;
    let log_deriv = g.sub(log_num, log_den2)?;
    let lad_in = g.neg(log_deriv)?;

    let zeros = g.constant(Tensor::zeros(&[rows, 1]))?;
    let z = g.select(inside.clone(), z_in, y)?;
    let lad = g.select(inside, lad_in, zeros)?;
    Ok((z, lad))
}

/// Inverse of a stack of layers whose raw parameters sit side by side in
/// `head` (`rows x layers*(3M-1)`), undoing the last layer first. Returns
/// the base-space column and the summed log-determinant column.
pub fn stack_inverse(g: &mut Graph, head: NodeId, y: NodeId, config: &FlowConfig) -> Result<(NodeId, NodeId)> {
    if config.layers == 0 {
        return Err(structural!("flow stack needs at least one layer"));
    }
    let per = config.raw_len_per_layer();
    let mut value = y;
    let mut total: Option<NodeId> = None;
    for k in (0..config.layers).rev() {
        let raw = g.slice_cols(head, k * per, (k + 1) * per)?;
        let (z, lad) = spline_inverse(g, raw, value, config.bins, config.bound)?;
        value = z;
        total = Some(match total {
            None => lad,
            Some(acc) => g.add(acc, lad)?,
        });
    }
    Ok((value, total.expect("at least one layer")))
}
