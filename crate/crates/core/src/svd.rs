//! Ordered thin SVD backed by faer (bidiagonalization + divide and conquer).

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Matrix;

/// `A = U diag(s) V^T` with `s` non-increasing. For an `m x n` input with
/// `m <= n`, `u` is `m x m` and `v` is `n x m`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl ThinSvd {
    /// `U diag(d) V^T` for an arbitrary diagonal `d` of length `s.len()`.
    pub fn compose(&self, d: &[f64]) -> Matrix {
        debug_assert_eq!(d.len(), self.s.len());
        let mut us = self.u.clone();
        for (mut col, &di) in us.column_iter_mut().zip(d) {
            col *= di;
        }
        us * self.v.transpose()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.compose(&self.s)
    }
}

/// How positive singular values are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankMode {
    /// `s_i > 0`, for vectors produced by thresholding (exact zeros).
    Exact,
    /// `s_i > 1e-12 * s_0`, for raw decompositions.
    Relative,
}

pub const RELATIVE_RANK_CUTOFF: f64 = 1e-12;

pub fn rank_of(s: &[f64], mode: RankMode) -> usize {
    match mode {
        RankMode::Exact => s.iter().filter(|&&v| v > 0.0).count(),
        RankMode::Relative => {
            let Some(&top) = s.first() else { return 0 };
            if top <= 0.0 {
                return 0;
            }
            s.iter().filter(|&&v| v > RELATIVE_RANK_CUTOFF * top).count()
        }
    }
}

/// Thin SVD with singular values sorted descending. Ties keep the backend's
/// order (stable sort).
pub fn svd_ordered(a: &Matrix) -> Result<ThinSvd> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("svd input contains NaN or Inf".into()));
    }
    let fa = Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = fa.thin_svd().map_err(|e| {
        Error::Numerical(format!(
            "svd failed on {m}x{n} matrix (frobenius norm {:.3e}, max abs {:.3e}): {e:?}",
            a.norm(),
            a.amax()
        ))
    })?;
    let (u, v) = (svd.U(), svd.V());
    let raw = svd.S().column_vector();

    let k = m.min(n);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));

    let s: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let u = Matrix::from_fn(m, k, |r, c| u[(r, order[c])]);
    let v = Matrix::from_fn(n, k, |r, c| v[(r, order[c])]);

    debug_assert!(s.windows(2).all(|w| w[0] >= w[1]));
    Ok(ThinSvd { u, s, v })
}
