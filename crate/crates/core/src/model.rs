//! Problem data and the smooth part of the objective.
//!
//! The objective is `F(X) = f(X) + lambda * sum_i sigma_i(X)^p` with the
//! matrix-completion loss `f(X) = 1/2 ||M - P_Omega(X)||_F^2`. Instances are
//! normalized to `m <= n` at construction; see [`ProblemInstance::transposed`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Value, gradient and smoothness modulus of the data-fitting term.
pub trait SmoothLoss {
    fn shape(&self) -> (usize, usize);
    fn value(&self, x: &Matrix) -> Result<f64>;
    fn gradient(&self, x: &Matrix) -> Result<Matrix>;
    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
    fn is_convex(&self) -> bool;
}

/// `f(X) = 1/2 sum_{(i,j) in Omega} (M_ij - X_ij)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionLoss {
    observed: Matrix,
    /// Row-major sorted, deduplicated.
    mask: Vec<(usize, usize)>,
}

impl CompletionLoss {
    pub fn new(observed: Matrix, mut mask: Vec<(usize, usize)>) -> Result<Self> {
        let (m, n) = observed.shape();
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument("empty observation matrix".into()));
        }
        mask.sort_unstable();
        mask.dedup();
        if let Some(&(i, j)) = mask.iter().find(|&&(i, j)| i >= m || j >= n) {
            return Err(Error::InvalidArgument(format!(
                "mask entry ({i},{j}) outside {m}x{n}"
            )));
        }
        if observed.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observed data is not finite".into()));
        }
        let mut on_mask = vec![false; m * n];
        for &(i, j) in &mask {
            on_mask[i * n + j] = true;
        }
        for i in 0..m {
            for j in 0..n {
                if observed[(i, j)] != 0.0 && !on_mask[i * n + j] {
                    return Err(Error::InvalidArgument(format!(
                        "observed entry ({i},{j}) is nonzero but not on the mask"
                    )));
                }
            }
        }
        Ok(Self { observed, mask })
    }

    pub fn observed(&self) -> &Matrix {
        &self.observed
    }

    pub fn mask(&self) -> &[(usize, usize)] {
        &self.mask
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.shape() != self.observed.shape() {
            return Err(Error::dims("loss argument", self.observed.shape(), x.shape()));
        }
        Ok(())
    }

    fn transpose(&self) -> Self {
        let mut mask: Vec<_> = self.mask.iter().map(|&(i, j)| (j, i)).collect();
        mask.sort_unstable();
        Self {
            observed: self.observed.transpose(),
            mask,
        }
    }
}

impl SmoothLoss for CompletionLoss {
    fn shape(&self) -> (usize, usize) {
        self.observed.shape()
    }

    fn value(&self, x: &Matrix) -> Result<f64> {
        self.check(x)?;
        let sum: f64 = self
            .mask
            .iter()
            .map(|&ij| {
                let r = self.observed[ij] - x[ij];
                r * r
            })
            .sum();
        Ok(0.5 * sum)
    }

    fn gradient(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut g = Matrix::zeros(x.nrows(), x.ncols());
        for &ij in &self.mask {
            g[ij] = x[ij] - self.observed[ij];
        }
        Ok(g)
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// A Schatten-p regularized matrix completion problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    loss: CompletionLoss,
    lambda: f64,
    p: f64,
    transposed: bool,
}

impl ProblemInstance {
    /// Builds an instance from observed data that is already zero off the mask.
    /// Tall inputs (`rows > cols`) are stored transposed.
    pub fn new(observed: Matrix, mask: Vec<(usize, usize)>, lambda: f64, p: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("p must lie in (0,1), got {p}")));
        }
        let loss = CompletionLoss::new(observed, mask)?;
        let (m, n) = loss.shape();
        let (loss, transposed) = if m > n {
            (loss.transpose(), true)
        } else {
            (loss, false)
        };
        Ok(Self {
            loss,
            lambda,
            p,
            transposed,
        })
    }

    /// Samples `full` on `mask` and builds the instance.
    pub fn from_samples(full: &Matrix, mask: Vec<(usize, usize)>, lambda: f64, p: f64) -> Result<Self> {
        let mut observed = Matrix::zeros(full.nrows(), full.ncols());
        for &(i, j) in &mask {
            if i >= full.nrows() || j >= full.ncols() {
                return Err(Error::InvalidArgument(format!(
                    "mask entry ({i},{j}) outside {}x{}",
                    full.nrows(),
                    full.ncols()
                )));
            }
            observed[(i, j)] = full[(i, j)];
        }
        Self::new(observed, mask, lambda, p)
    }

    /// Rows of the internal (`m <= n`) orientation.
    pub fn m(&self) -> usize {
        self.loss.shape().0
    }

    pub fn n(&self) -> usize {
        self.loss.shape().1
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn lipschitz(&self) -> f64 {
        self.loss.lipschitz()
    }

    pub fn loss(&self) -> &CompletionLoss {
        &self.loss
    }

    /// Observed matrix in internal orientation.
    pub fn observed(&self) -> &Matrix {
        self.loss.observed()
    }

    pub fn mask(&self) -> &[(usize, usize)] {
        self.loss.mask()
    }

    pub fn observed_norm(&self) -> f64 {
        self.loss.observed().norm()
    }

    /// True when the caller's data was tall and is stored transposed.
    pub fn transposed(&self) -> bool {
        self.transposed
    }

    /// Caller-facing shape (before normalization).
    pub fn user_shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.n(), self.m())
        } else {
            (self.m(), self.n())
        }
    }

    /// Maps a matrix in the caller's orientation to the internal one.
    pub fn to_internal(&self, x: &Matrix) -> Result<Matrix> {
        if x.shape() != self.user_shape() {
            return Err(Error::dims("matrix", self.user_shape(), x.shape()));
        }
        Ok(if self.transposed { x.transpose() } else { x.clone() })
    }

    pub fn to_user(&self, x: &Matrix) -> Matrix {
        if self.transposed {
            x.transpose()
        } else {
            x.clone()
        }
    }

    pub fn loss_value(&self, x: &Matrix) -> Result<f64> {
        self.loss.value(x)
    }

    pub fn loss_gradient(&self, x: &Matrix) -> Result<Matrix> {
        self.loss.gradient(x)
    }

    /// `F(X) = f(X) + lambda * sum sigma_i^p`, with `sigma` the singular
    /// values of `x` supplied by the caller.
    pub fn objective_value(&self, x: &Matrix, sigma: &[f64]) -> Result<f64> {
        Ok(self.loss_value(x)? + schatten_p(sigma, self.lambda, self.p))
    }
}

/// `lambda * sum sigma_i^p`. Zero singular values contribute nothing.
pub fn schatten_p(sigma: &[f64], lambda: f64, p: f64) -> f64 {
    lambda * sigma.iter().filter(|&&s| s > 0.0).map(|s| s.powf(p)).sum::<f64>()
}
