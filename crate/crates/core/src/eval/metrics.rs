//! Regression metrics over paired predictions and truths.

use crate::error::{Error, Result};

fn check(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::contract(format!(
            "metrics need equal non-empty inputs, got {} predictions and {} truths",
            preds.len(),
            truths.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

/// `1 − SS_res / SS_tot`, pooled over all pairs. Constant truths leave R²
/// undefined and yield a contract error.
pub fn r2(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check(preds, truths)?;
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::contract("R² is undefined for constant truths"));
    }
    let ss_res: f64 = preds.iter().zip(truths).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
