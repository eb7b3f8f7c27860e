use super::Objective;
use crate::error::{Error, Result};

/// Components smaller than this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

/// Largest coordinate-wise relative error between the analytic gradient and
/// a central finite difference with step `eps`.
///
/// The relative error of coordinate `i` is `|a_i − n_i| / max(|a_i|, |n_i|, 1e-6)`.
pub fn gradient_check(objective: &dyn Objective, point: &[f64], eps: f64) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::arg(format!("finite-difference step {eps} outside [1e-8, 1e-3]")));
    }
    if point.len() != objective.dim() {
        return Err(Error::DimensionMismatch {
            field: "gradient-check point".into(),
            expected: objective.dim(),
            found: point.len(),
        });
    }
    let (f0, analytic) = objective.value_and_gradient(point);
    if !f0.is_finite() {
        return Err(Error::NonFiniteResult("objective at gradient-check point".into()));
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = objective.value(&x);
        x[i] = orig - eps;
        let fm = objective.value(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteResult("objective near gradient-check point".into()));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
