//! Weighted singular value thresholding.
//!
//! Minimizes `beta/2 ||X - Z||_F^2 + lambda/2 sum_i w_i sigma_i(X)` over all
//! `X`. With ascending weights the global minimizer keeps the singular
//! vectors of `Z` and soft-thresholds each singular value by its own
//! `lambda w_i / (2 beta)`, pairing the largest value with the smallest
//! weight.

use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::regularizer::first_descent;
use crate::svd::{svd_ordered, ThinSvd};

#[derive(Debug, Clone)]
pub struct SubproblemInput {
    /// `Z = (X^k + Y^k)/2 - grad f(Y^k) / (2 beta)`.
    pub step_matrix: Matrix,
    /// Non-decreasing, positive.
    pub weights: Vec<f64>,
    /// `lambda / (2 beta)`.
    pub threshold_scale: f64,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: Matrix,
    /// Factors shared by `x` and the step matrix; `svd.s` holds the
    /// thresholded values, i.e. the singular values of `x`.
    pub svd: ThinSvd,
    /// Singular values of the step matrix.
    pub step_sigma: Vec<f64>,
}

impl SubproblemSolution {
    pub fn rank(&self) -> usize {
        self.svd.s.iter().filter(|&&s| s > 0.0).count()
    }
}

pub fn solve_weighted_svt(input: &SubproblemInput) -> Result<SubproblemSolution> {
    let k = input.step_matrix.nrows().min(input.step_matrix.ncols());
    if input.weights.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} singular values",
            input.weights.len(),
            k
        )));
    }
    if let Some(i) = input.weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Invariant(format!("weight {i} = {} is not positive", input.weights[i])));
    }
    if let Some(i) = first_descent(&input.weights) {
        return Err(Error::Invariant(format!(
            "weights must be non-decreasing: w[{i}] = {} > w[{}] = {}",
            input.weights[i],
            i + 1,
            input.weights[i + 1]
        )));
    }
    if !(input.threshold_scale >= 0.0 && input.threshold_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "threshold scale must be finite and nonnegative, got {}",
            input.threshold_scale
        )));
    }

    let mut svd = svd_ordered(&input.step_matrix)?;
    let step_sigma = svd.s.clone();
    for (s, w) in svd.s.iter_mut().zip(&input.weights) {
        *s = (*s - input.threshold_scale * w).max(0.0);
    }
    let x = svd.reconstruct();
    Ok(SubproblemSolution { x, svd, step_sigma })
}

/// Subgradient multipliers of `|sigma|` at the solution: 1 on the support and
/// `Sigma_i / (threshold_scale w_i)` clamped to `[0, 1]` on the zero set.
pub fn subgradient_multipliers(solution: &SubproblemSolution, weights: &[f64], threshold_scale: f64) -> Vec<f64> {
    solution
        .svd
        .s
        .iter()
        .zip(&solution.step_sigma)
        .zip(weights)
        .map(|((&out, &sig), &w)| {
            if out > 0.0 {
                1.0
            } else {
                let t = threshold_scale * w;
                if t > 0.0 {
                    (sig / t).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// Frobenius norm of
/// `grad f(Y) + beta (X+ - Y) + beta (X+ - X) + lambda U diag(w o xi) V^T`,
/// evaluated through the equivalent form
/// `2 beta (X+ - Z) + lambda U diag(w o xi) V^T`.
pub fn subproblem_kkt_residual(
    solution: &SubproblemSolution,
    input: &SubproblemInput,
    beta: f64,
    lambda: f64,
) -> Result<f64> {
    if solution.x.shape() != input.step_matrix.shape() {
        return Err(Error::dims("subproblem solution", input.step_matrix.shape(), solution.x.shape()));
    }
    let xi = subgradient_multipliers(solution, &input.weights, input.threshold_scale);
    let d: Vec<f64> = input.weights.iter().zip(&xi).map(|(w, x)| lambda * w * x).collect();
    let sub = solution.svd.compose(&d);
    let r = (&solution.x - &input.step_matrix) * (2.0 * beta) + sub;
    Ok(r.norm())
}
