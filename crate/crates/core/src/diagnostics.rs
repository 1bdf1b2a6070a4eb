//! Recovery metrics, first-order optimality measures and per-iteration trace
//! records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::ImageTensor;
use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemInstance};
use crate::subproblem::{subgradient_multipliers, SubproblemSolution};
use crate::svd::{rank_of, RankMode, ThinSvd};

/// Runtime certificate values computed at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationCertificate {
    /// `H^k - H^{k+1} - C ||X^k - X^{k-1}||_F^2`; must stay above `-slack`.
    pub decrease_margin: f64,
    /// `L(X^{k+1}) - L(X^k)` for the extrapolated surrogate; must stay below `slack`.
    pub surrogate_gap: f64,
    /// Stationarity residual of the thresholding step.
    pub subproblem_kkt: f64,
    /// `||Z||_F` of the step matrix; the residual is judged against `1e-8 max(1, ||Z||_F)`.
    pub step_matrix_norm: f64,
    /// `||E^{k+1}||_F`.
    pub optimality_error: f64,
    pub weights_ordered: bool,
}

/// Relative tolerance on the thresholding-step residual.
pub const SUBPROBLEM_KKT_TOL: f64 = 1e-8;

impl IterationCertificate {
    pub fn subproblem_ok(&self) -> bool {
        self.subproblem_kkt <= SUBPROBLEM_KKT_TOL * self.step_matrix_norm.max(1.0)
    }
}

/// Metrics of iterate `X^k` (the output of iteration `k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub f_val: f64,
    pub penalty_val: f64,
    pub objective: f64,
    pub merit_h: f64,
    pub rel_err: Option<f64>,
    pub rel_dist: f64,
    pub rank: usize,
    pub step_fro: f64,
    pub step_inf: f64,
    pub eps_max_support: Option<f64>,
    pub eps_max_zeroset: Option<f64>,
    pub alpha_used: f64,
    pub certificate: IterationCertificate,
}

pub const TRACE_HEADER: &str =
    "k,f,penalty,objective,H,rel_err,rel_dist,rank,step_fro,step_inf,eps_sup_max,eps_zero_max,alpha";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        [
            self.k.to_string(),
            num(self.f_val),
            num(self.penalty_val),
            num(self.objective),
            num(self.merit_h),
            opt(self.rel_err),
            num(self.rel_dist),
            self.rank.to_string(),
            num(self.step_fro),
            num(self.step_inf),
            opt(self.eps_max_support),
            opt(self.eps_max_zeroset),
            num(self.alpha_used),
        ]
        .join(",")
    }
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// `||x - x*||_F / ||x*||_F`.
pub fn rel_err(x: &Matrix, x_star: &Matrix) -> Result<f64> {
    if x.shape() != x_star.shape() {
        return Err(Error::dims("rel_err", x_star.shape(), x.shape()));
    }
    let denom = x_star.norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("relative error against a zero reference".into()));
    }
    Ok((x - x_star).norm() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelDist {
    pub value: f64,
    /// The iterate has rank zero and the distance is reported as 0.
    pub degenerate: bool,
}

/// `||U_r^T grad f(X) V_r + lambda p diag(sigma_1^(p-1), .., sigma_r^(p-1))||_F / ||M||_F`,
/// with `r` the number of exactly positive singular values in `svd_x`.
/// A zero observation matrix is normalized by 1.
pub fn rel_dist(instance: &ProblemInstance, x: &Matrix, svd_x: &ThinSvd, lambda: f64, p: f64) -> Result<RelDist> {
    let g = instance.loss_gradient(x)?;
    let r = rank_of(&svd_x.s, RankMode::Exact);
    if r == 0 {
        return Ok(RelDist {
            value: 0.0,
            degenerate: true,
        });
    }
    let ur = svd_x.u.columns(0, r);
    let vr = svd_x.v.columns(0, r);
    let mut d = ur.transpose() * g * vr;
    for i in 0..r {
        d[(i, i)] += lambda * p * svd_x.s[i].powf(p - 1.0);
    }
    let norm_m = instance.observed_norm();
    let denom = if norm_m > 0.0 { norm_m } else { 1.0 };
    Ok(RelDist {
        value: d.norm() / denom,
        degenerate: false,
    })
}

/// `||E^{k+1}||_F` with `E^{k+1} = grad f(X^{k+1}) + lambda U diag(wbar o xi) V^T`,
/// where `wbar_i = p sigma_i^(p-1)` on the support of `X^{k+1}` and the
/// previous weight `w_i^k` on its zero set, and `xi` are the subgradient
/// multipliers certified by the thresholding step.
pub fn optimality_error(
    instance: &ProblemInstance,
    solution: &SubproblemSolution,
    weights_prev: &[f64],
    beta: f64,
) -> Result<f64> {
    let lambda = instance.lambda();
    let p = instance.p();
    let xi = subgradient_multipliers(solution, weights_prev, lambda / (2.0 * beta));
    let d: Vec<f64> = solution
        .svd
        .s
        .iter()
        .zip(weights_prev)
        .zip(&xi)
        .map(|((&s, &w), &x)| {
            let wbar = if s > 0.0 { p * s.powf(p - 1.0) } else { w };
            lambda * wbar * x
        })
        .collect();
    let e = instance.loss_gradient(&solution.x)? + solution.svd.compose(&d);
    Ok(e.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    /// Decibels; `+inf` when the images are identical.
    pub db: f64,
    pub identical: bool,
}

/// `10 log10(255^2 / MSE)` with the MSE averaged over all channels and pixels.
pub fn psnr(restored: &ImageTensor, reference: &ImageTensor) -> Result<Psnr> {
    if restored.channels.len() != reference.channels.len() || restored.shape() != reference.shape() {
        return Err(Error::InvalidArgument(format!(
            "psnr shape mismatch: {}x{:?} vs {}x{:?}",
            restored.channels.len(),
            restored.shape(),
            reference.channels.len(),
            reference.shape()
        )));
    }
    let (m, n) = reference.shape();
    let count = (reference.channels.len() * m * n) as f64;
    let sse: f64 = restored
        .channels
        .iter()
        .zip(&reference.channels)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let mse = sse / count;
    if mse == 0.0 {
        return Ok(Psnr {
            db: f64::INFINITY,
            identical: true,
        });
    }
    Ok(Psnr {
        db: 10.0 * (255.0f64 * 255.0 / mse).log10(),
        identical: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::svd_ordered;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn rel_err_examples() {
        let x = random(4, 5, 1);
        assert_eq!(rel_err(&x, &x).unwrap(), 0.0);
        assert!((rel_err(&(&x * 2.0), &x).unwrap() - 1.0).abs() < 1e-15);
        let y = random(4, 5, 2);
        let direct = (&y - &x).iter().map(|v| v * v).sum::<f64>().sqrt() / x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((rel_err(&y, &x).unwrap() - direct).abs() < 1e-14);
        assert!((rel_err(&(&y * -3.0), &(&x * -3.0)).unwrap() - rel_err(&y, &x).unwrap()).abs() < 1e-14);
        assert!(rel_err(&x, &Matrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn rel_dist_scalar_case() {
        let obs = Matrix::from_element(1, 1, 4.0);
        let inst = ProblemInstance::new(obs.clone(), vec![(0, 0)], 1.0, 0.5).unwrap();
        let svd = svd_ordered(&obs).unwrap();
        let d = rel_dist(&inst, &obs, &svd, 1.0, 0.5).unwrap();
        assert!((d.value - 0.0625).abs() < 1e-15);
        assert!(!d.degenerate);
    }

    #[test]
    fn rel_dist_zero_gradient_zero_lambda() {
        let full = random(3, 4, 4);
        let mask: Vec<_> = (0..3).flat_map(|i| (0..4).map(move |j| (i, j))).collect();
        let inst = ProblemInstance::from_samples(&full, mask, 1.0, 0.5).unwrap();
        let svd = svd_ordered(&full).unwrap();
        assert!(rel_dist(&inst, &full, &svd, 0.0, 0.5).unwrap().value < 1e-14);
    }

    #[test]
    fn rel_dist_rank_zero_is_degenerate() {
        let inst = ProblemInstance::new(Matrix::zeros(2, 2), vec![(0, 0)], 1.0, 0.5).unwrap();
        let z = Matrix::zeros(2, 2);
        let svd = svd_ordered(&z).unwrap();
        let d = rel_dist(&inst, &z, &svd, 1.0, 0.5).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.degenerate);
    }

    #[test]
    fn rel_dist_invariant_under_orthogonal_change_of_basis() {
        // Full mask: grad f(X) = X - M, so rotating X and M together rotates
        // the gradient and leaves the distance unchanged.
        let m = random(3, 5, 8);
        let x = random(3, 5, 9);
        let q = svd_ordered(&random(3, 3, 10)).unwrap().u;
        let full: Vec<_> = (0..3).flat_map(|i| (0..5).map(move |j| (i, j))).collect();
        let a = ProblemInstance::from_samples(&m, full.clone(), 0.7, 0.5).unwrap();
        let b = ProblemInstance::from_samples(&(&q * &m), full, 0.7, 0.5).unwrap();
        let qx = &q * &x;
        let da = rel_dist(&a, &x, &svd_ordered(&x).unwrap(), 0.7, 0.5).unwrap().value;
        let db = rel_dist(&b, &qx, &svd_ordered(&qx).unwrap(), 0.7, 0.5).unwrap().value;
        assert!((da - db).abs() < 1e-12 * da.max(1.0), "{da} vs {db}");
    }

    fn gray(v: &[f64]) -> ImageTensor {
        ImageTensor::new(vec![Matrix::from_row_slice(1, v.len(), v)]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let zero = gray(&[0.0, 0.0]);
        let full = gray(&[255.0, 255.0]);
        assert!((psnr(&full, &zero).unwrap().db).abs() < 1e-12);
        let one = gray(&[1.0, 1.0]);
        let p = psnr(&one, &zero).unwrap();
        assert!((p.db - 10.0 * 65025f64.log10()).abs() < 1e-12);
        assert!((p.db - 48.13).abs() < 0.01);
        let same = psnr(&zero, &zero).unwrap();
        assert!(same.identical && same.db.is_infinite());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = ImageTensor::new(vec![Matrix::from_fn(8, 8, |i, j| (i * 8 + j) as f64); 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pattern: Vec<Matrix> = (0..3).map(|_| Matrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mut last = f64::INFINITY;
        for amp in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let noisy = ImageTensor::new(base.channels.iter().zip(&pattern).map(|(c, p)| c + p * amp).collect()).unwrap();
            let db = psnr(&noisy, &base).unwrap().db;
            assert!(db < last);
            last = db;
        }
    }

    #[test]
    fn csv_row_layout() {
        let rec = IterationRecord {
            k: 3,
            f_val: 1.5,
            penalty_val: 0.25,
            objective: 1.75,
            merit_h: 2.0,
            rel_err: None,
            rel_dist: 1e-6,
            rank: 2,
            step_fro: 0.1,
            step_inf: 0.05,
            eps_max_support: Some(0.01),
            eps_max_zeroset: None,
            alpha_used: 0.7,
            certificate: IterationCertificate {
                decrease_margin: 0.0,
                surrogate_gap: 0.0,
                subproblem_kkt: 0.0,
                step_matrix_norm: 1.0,
                optimality_error: 0.0,
                weights_ordered: true,
            },
        };
        let row = rec.csv_row();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), TRACE_HEADER.split(',').count());
        assert_eq!(fields[0], "3");
        assert_eq!(fields[5], "");
        assert_eq!(fields[11], "");
        assert_eq!(fields[1].parse::<f64>().unwrap(), 1.5);
        assert_eq!(fields[6].parse::<f64>().unwrap(), 1e-6);
    }
}
