//! Central finite-difference verification of reverse-mode gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{numeric, structural, Result};
use crate::graph::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Relative discrepancy used throughout: `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Worst coordinate found by [`finite_difference_report`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients against central differences for every
/// scalar in `store` and returns the largest [`relative_error`].
///
/// `eval` must return the loss and one gradient tensor per parameter. Each
/// coordinate `theta` is perturbed by `step * (1 + |theta|)`.
pub fn finite_difference_check<F>(store: &ParamStore, step: f64, eval: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(f64, Vec<Tensor>)>,
{
    finite_difference_report(store, step, eval).map(|r| r.max_error)
}

/// Same as [`finite_difference_check`] but also says where the worst
/// disagreement is.
pub fn finite_difference_report<F>(store: &ParamStore, step: f64, eval: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Vec<Tensor>)>,
{
    if !(step > 0.0) {
        return Err(structural!("finite-difference step must be positive, got {step}"));
    }
    let (_, analytic) = eval(store)?;
    if analytic.len() != store.len() {
        return Err(structural!(
            "expected {} gradient tensors, got {}",
            store.len(),
            analytic.len()
        ));
    }
    let mut probe = store.clone();
    let mut worst = GradCheckReport::default();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let theta = store.tensors()[p].values()[i];
            let h = step * (1.0 + theta.abs());
            probe.tensors_mut()[p].values_mut()[i] = theta + h;
            let (plus, _) = eval(&probe)?;
            probe.tensors_mut()[p].values_mut()[i] = theta - h;
            let (minus, _) = eval(&probe)?;
            probe.tensors_mut()[p].values_mut()[i] = theta;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(numeric!(
                    "loss became non-finite when perturbing {}[{i}]",
                    store.name(ParamId(p))
                ));
            }
            let fd = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.values()[i], fd);
            if err > worst.max_error {
                worst = GradCheckReport {
                    max_error: err,
                    param: store.name(ParamId(p)).into(),
                    index: i,
                    analytic: grad.values()[i],
                    numeric: fd,
                };
            }
        }
    }
    Ok(worst)
}
