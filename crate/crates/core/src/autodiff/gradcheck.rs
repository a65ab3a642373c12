//! Gradient verification by central finite differences. This lives next to
//! the graph but never calls into `backward`, so it stays an independent
//! oracle for the analytic path.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Central differences of a scalar function at `point`.
pub fn central_differences<F>(f: &mut F, point: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_eps(eps)?;
    let mut perturbed = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + eps;
        let plus = f(&perturbed)?;
        perturbed[i] = point[i] - eps;
        let minus = f(&perturbed)?;
        perturbed[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function output while perturbing coordinate {i}"
            )));
        }
        grads.push((plus - minus) / (2.0 * eps));
    }
    Ok(grads)
}

/// Max over all coordinates of `|analytic - central| / max(1, |central|)`.
pub fn max_relative_error(analytic: &[f64], central: &[f64]) -> f64 {
    debug_assert_eq!(analytic.len(), central.len());
    analytic
        .iter()
        .zip(central)
        .map(|(&a, &c)| (a - c).abs() / c.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares an analytic gradient against central differences of the value
/// function, returning the max relative error.
pub fn grad_check<F>(mut value: F, analytic: &[f64], point: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::InvalidArgument(format!(
            "analytic gradient has {} coordinates, point has {}",
            analytic.len(),
            point.len()
        )));
    }
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let central = central_differences(&mut value, point, eps)?;
    Ok(max_relative_error(analytic, &central))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be in (0, 1e-2], got {eps}"
        )));
    }
    Ok(())
}
