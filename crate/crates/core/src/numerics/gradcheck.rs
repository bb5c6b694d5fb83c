use crate::error::{Error, Result};

use super::Tensor;

/// Central-difference gradient check.
///
/// Returns the largest elementwise relative error
/// `|g_fd - g_an| / max(|g_fd|, |g_an|, 1e-8)` where
/// `g_fd = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn grad_check<F>(mut f: F, x: &Tensor<f64>, eps: f64, analytic: &Tensor<f64>) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if x.shape() != analytic.shape() {
        return Err(Error::Shape(format!(
            "analytic gradient {:?} does not match input {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective not finite around element {i}"
            )));
        }
        let fd = (plus - minus) / (2.0 * eps);
        let an = analytic.data()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
