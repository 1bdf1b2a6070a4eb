//! Smoothed Schatten-p penalty `lambda * sum (sigma_i + eps_i)^p`, its
//! linearization weights, and the merit function used by the descent
//! certificate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemInstance};

/// Weights above this abort the iteration.
pub const WEIGHT_OVERFLOW: f64 = 1e300;

/// Per-index perturbations. `frozen[i]` marks indices whose value was not
/// reduced by the most recent update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationState {
    pub eps: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl PerturbationState {
    pub fn uniform(m: usize, value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidArgument(format!("perturbation must be positive, got {value}")));
        }
        Ok(Self {
            eps: vec![value; m],
            frozen: vec![false; m],
        })
    }
}

fn check_lengths(sigma: &[f64], eps: &[f64]) -> Result<()> {
    if sigma.len() != eps.len() {
        return Err(Error::InvalidArgument(format!(
            "sigma has {} entries but eps has {}",
            sigma.len(),
            eps.len()
        )));
    }
    Ok(())
}

pub fn smoothed_penalty(sigma: &[f64], eps: &[f64], lambda: f64, p: f64) -> Result<f64> {
    check_lengths(sigma, eps)?;
    if let Some(i) = eps.iter().position(|&e| !(e > 0.0)) {
        return Err(Error::Invariant(format!("eps[{i}] = {} is not positive", eps[i])));
    }
    Ok(lambda * sigma.iter().zip(eps).map(|(s, e)| (s + e).powf(p)).sum::<f64>())
}

/// `w_i = p (sigma_i + eps_i)^(p-1)`.
pub fn compute_weights(sigma: &[f64], eps: &[f64], p: f64) -> Result<Vec<f64>> {
    check_lengths(sigma, eps)?;
    sigma
        .iter()
        .zip(eps)
        .enumerate()
        .map(|(i, (&s, &e))| {
            let t = s + e;
            if !(t > 0.0) {
                return Err(Error::Invariant(format!("sigma[{i}] + eps[{i}] = {t} is not positive")));
            }
            let w = p * t.powf(p - 1.0);
            if !(w <= WEIGHT_OVERFLOW) {
                return Err(Error::Numerical(format!(
                    "weight {i} overflowed ({w:e}) at sigma + eps = {t:e}"
                )));
            }
            Ok(w)
        })
        .collect()
}

/// First index where `w` decreases, if any.
pub fn first_descent(w: &[f64]) -> Option<usize> {
    w.windows(2).position(|pair| pair[0] > pair[1])
}

/// `H(X, X_prev, eps) = f(X) + beta/2 ||X - X_prev||_F^2 + lambda sum (sigma_i + eps_i)^p`.
pub fn merit_h(
    instance: &ProblemInstance,
    x: &Matrix,
    x_prev: &Matrix,
    sigma: &[f64],
    eps: &[f64],
    beta: f64,
) -> Result<f64> {
    if x.shape() != x_prev.shape() {
        return Err(Error::dims("previous iterate", x.shape(), x_prev.shape()));
    }
    let prox = 0.5 * beta * (x - x_prev).norm_squared();
    Ok(instance.loss_value(x)? + prox + smoothed_penalty(sigma, eps, instance.lambda(), instance.p())?)
}
