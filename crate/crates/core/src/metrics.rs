//! Quantitative comparison of tensors: SQNR and MSE against an oracle.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Error summary of a test tensor against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Signal-to-quantization-noise ratio in decibels. Infinite when the
    /// noise is exactly zero (serialized as JSON null).
    pub sqnr_db: f64,
    /// Mean squared error.
    pub mse: f64,
    /// Largest absolute elementwise deviation.
    pub max_abs_err: f64,
    /// Number of compared elements.
    pub num_elements: usize,
}

fn check(reference: &[f64], test: &[f64]) -> Result<()> {
    if reference.len() != test.len() {
        return Err(Error::shape(format!(
            "reference has {} elements, test has {}",
            reference.len(),
            test.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("cannot compare empty tensors"));
    }
    Ok(())
}

/// `10·log10(Σ ref² / Σ (ref − test)²)`; +∞ when the noise power is exactly
/// zero. An all-zero reference has no signal power and is rejected.
pub fn sqnr(reference: &[f64], test: &[f64]) -> Result<f64> {
    check(reference, test)?;
    let signal: f64 = reference.iter().map(|&r| r * r).sum();
    if signal == 0.0 {
        return Err(Error::invalid("SQNR undefined for an all-zero reference"));
    }
    let noise: f64 = reference
        .iter()
        .zip(test)
        .map(|(&r, &t)| (r - t) * (r - t))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Mean squared error.
pub fn mse(reference: &[f64], test: &[f64]) -> Result<f64> {
    check(reference, test)?;
    let sum: f64 = reference
        .iter()
        .zip(test)
        .map(|(&r, &t)| (r - t) * (r - t))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Largest absolute deviation.
pub fn max_abs_err(reference: &[f64], test: &[f64]) -> Result<f64> {
    check(reference, test)?;
    Ok(reference
        .iter()
        .zip(test)
        .map(|(&r, &t)| (r - t).abs())
        .fold(0.0, f64::max))
}

/// Bundle all three metrics.
pub fn error_report(reference: &[f64], test: &[f64]) -> Result<ErrorReport> {
    Ok(ErrorReport {
        sqnr_db: sqnr(reference, test)?,
        mse: mse(reference, test)?,
        max_abs_err: max_abs_err(reference, test)?,
        num_elements: reference.len(),
    })
}
