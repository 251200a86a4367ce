//! Error metrics for estimated direct effects.

use crate::error::MetricError;

fn check(truth: &[f64], estimate: &[f64]) -> Result<(), MetricError> {
    if truth.len() != estimate.len() {
        return Err(MetricError::LengthMismatch { left: truth.len(), right: estimate.len() });
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Root mean squared deviation between true and estimated effects.
pub fn pehe(truth: &[f64], estimate: &[f64]) -> Result<f64, MetricError> {
    check(truth, estimate)?;
    let sq: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e) * (t - e)).sum();
    Ok(libm::sqrt(sq / truth.len() as f64))
}

/// Absolute difference between the mean true and mean estimated effects.
pub fn ate_error(truth: &[f64], estimate: &[f64]) -> Result<f64, MetricError> {
    check(truth, estimate)?;
    let n = truth.len() as f64;
    Ok((truth.iter().sum::<f64>() / n - estimate.iter().sum::<f64>() / n).abs())
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}
