//! Poisson deviance, the fitting and reporting loss.

use crate::error::{Error, Result};

/// Unit deviance `2 (mu - y - y ln(mu / y))` with `mu = exp(eta)`, using
/// `0 ln 0 = 0`.
pub fn unit_deviance_log(y: f64, eta: f64) -> f64 {
    if y > 0.0 {
        2.0 * y * exp_m1_minus(eta - y.ln())
    } else {
        2.0 * eta.exp()
    }
}

/// `r - ln(1 + r)` without cancellation near 0.
fn r_minus_ln_1p(r: f64) -> f64 {
    if r.abs() < 1e-2 {
        let mut term = -r;
        let mut sum = 0.0;
        for k in 2..=12 {
            term *= -r;
            sum += term / k as f64;
        }
        sum
    } else {
        r - r.ln_1p()
    }
}

/// `exp(t) - 1 - t` without cancellation near 0.
fn exp_m1_minus(t: f64) -> f64 {
    if t.abs() < 1e-2 {
        let mut term = t;
        let mut sum = 0.0;
        for k in 2..=12 {
            term *= t / k as f64;
            sum += term;
        }
        sum
    } else {
        t.exp_m1() - t
    }
}

/// Unit deviance on the count scale.
pub fn unit_deviance(y: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Contract(format!("prediction {mu} must be positive and finite")));
    }
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::Contract(format!("claim count {y} must be >= 0")));
    }
    Ok(if y > 0.0 {
        let r = (mu - y) / y;
        if r < -0.5 {
            2.0 * y * (r - (mu / y).ln())
        } else {
            2.0 * y * r_minus_ln_1p(r)
        }
    } else {
        2.0 * mu
    })
}

/// Summed deviance over paired counts and predictions.
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::shape(
            "poisson_deviance",
            format!("{} counts vs {} predictions", y.len(), mu.len()),
        ));
    }
    y.iter().zip(mu).map(|(&a, &b)| unit_deviance(a, b)).sum()
}

/// `100 * mean unit deviance`, the unit used in every report table.
pub fn deviance_percent(y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("deviance of zero rows".into()));
    }
    Ok(100.0 * poisson_deviance(y, mu)? / y.len() as f64)
}
