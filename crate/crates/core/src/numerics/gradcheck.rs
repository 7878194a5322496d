use crate::error::{Error, Result};

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the analytic gradient returned by `loss_fn` at `params` against
/// central differences `(L(p + h·eᵢ) − L(p − h·eᵢ)) / 2h` for every
/// coordinate. The relative error uses `max(|a|, |n|, 1e-8)` as denominator.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], step: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(step > 0.0) {
        return Err(Error::Argument(format!("step {step} must be positive")));
    }
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Argument(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_relative_error = 0.0;
    let mut worst_index = 0;
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + step;
        let (plus, _) = loss_fn(&probe)?;
        probe[i] = original - step;
        let (minus, _) = loss_fn(&probe)?;
        probe[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("loss not finite around coordinate {i}")));
        }
        let n = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(n.abs()).max(1e-8);
        let rel = (a - n).abs() / denom;
        if rel > max_relative_error {
            max_relative_error = rel;
            worst_index = i;
        }
        numeric.push(n);
    }
    Ok(GradCheck {
        max_relative_error,
        worst_index,
        analytic,
        numeric,
    })
}
