use crate::{Error, Result};

fn check(pred: &[f64], label: &[f64], what: &'static str) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Empty(what));
    }
    if pred.len() != label.len() {
        return Err(Error::shape(what, pred.len(), label.len()));
    }
    Ok(())
}

/// Root-mean-square error.
pub fn rmse(pred: &[f64], label: &[f64]) -> Result<f64> {
    check(pred, label, "rmse")?;
    let sum: f64 = pred.iter().zip(label).map(|(p, y)| (p - y).powi(2)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], label: &[f64]) -> Result<f64> {
    check(pred, label, "mae")?;
    let sum: f64 = pred.iter().zip(label).map(|(p, y)| (p - y).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Relative RMSE reduction `(baseline − model) / baseline`.
pub fn relative_gain(baseline: f64, model: f64) -> Result<f64> {
    if !(baseline > 0.0) || !baseline.is_finite() {
        return Err(Error::InvalidArgument(format!("baseline must be positive, got {baseline}")));
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("model error".into()));
    }
    Ok((baseline - model) / baseline)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("mean_sd"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
