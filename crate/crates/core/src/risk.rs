//! Entropic (exponential) risk operator on empirical samples.
//!
//! `R_β[C] = (1/β) log E[exp(β C)]` interpolates between the mean (β → 0)
//! and the maximum (β → ∞). The safety condition uses the lower variant
//! `-R_β[-C]`, which moves from the mean toward the minimum.

use crate::error::{Error, Result};

fn validate(values: &[f64], beta: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("risk of an empty sample set"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample value {v}")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::contract(format!("risk parameter must be >= 0, got {beta}")));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `(1/β) log(mean(exp(β v)))`, evaluated relative to the largest sample.
/// `β = 0` is the risk-neutral mean.
pub fn entropic_risk(values: &[f64], beta: f64) -> Result<f64> {
    validate(values, beta)?;
    if beta == 0.0 {
        return Ok(mean(values));
    }
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // mean(exp(β(v - top))) - 1, kept in expm1/ln1p form so small β stays accurate.
    let shifted = values
        .iter()
        .map(|v| (beta * (v - top)).exp_m1())
        .sum::<f64>()
        / values.len() as f64;
    Ok(top + shifted.ln_1p() / beta)
}

/// `-R_β[-v]`: lies between the sample minimum and the sample mean.
pub fn risk_lower(values: &[f64], beta: f64) -> Result<f64> {
    validate(values, beta)?;
    if beta == 0.0 {
        return Ok(mean(values));
    }
    let bottom = values.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted = values
        .iter()
        .map(|v| (-beta * (v - bottom)).exp_m1())
        .sum::<f64>()
        / values.len() as f64;
    Ok(bottom - shifted.ln_1p() / beta)
}
