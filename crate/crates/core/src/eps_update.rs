//! Adaptive perturbation update.
//!
//! Supports of sorted singular-value vectors are always leading blocks, so an
//! index set is represented by its size. The update shrinks the perturbation
//! on the new support by `mu`, and trims the remaining entries just enough to
//! keep `sigma + eps` non-increasing, which keeps the reweighting weights
//! ascending.
//!
//! Positions below are 0-based: with `r = |I|`, the last support index is
//! `r - 1` and the first zero-set index is `r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Perturbations never drop below the smallest normal double, so weights
/// at zero singular values stay finite.
pub const EPS_FLOOR: f64 = f64::MIN_POSITIVE;

/// Support `{0, .., len-1}` of a non-increasing singular value vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support(usize);

impl Support {
    pub fn new(len: usize) -> Self {
        Support(len)
    }

    pub fn len(self) -> usize {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Positive entries of `sigma`; errors unless they form a leading block.
    pub fn from_sigma(sigma: &[f64]) -> Result<Self> {
        let r = sigma.iter().take_while(|&&s| s > 0.0).count();
        if let Some(i) = sigma[r..].iter().position(|&s| s != 0.0) {
            return Err(Error::Invariant(format!(
                "support is not a prefix: sigma[{}] = {} follows a zero",
                r + i,
                sigma[r + i]
            )));
        }
        Ok(Support(r))
    }

    /// From an explicit index set; errors unless it is `{0, .., r-1}`.
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.iter().enumerate().any(|(k, &i)| k != i) {
            return Err(Error::Invariant(format!("support {sorted:?} is not a prefix")));
        }
        Ok(Support(sorted.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportChange {
    Shrink,
    Grow,
    Same,
}

#[derive(Debug, Clone)]
pub struct EpsUpdateInput<'a> {
    pub sigma_new: &'a [f64],
    pub support_new: Support,
    pub support_old: Support,
    pub eps_old: &'a [f64],
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsUpdate {
    pub eps: Vec<f64>,
    pub change: SupportChange,
    /// New support is empty; nothing was shrunk.
    pub degenerate: bool,
}

/// Leaves `eps[from..]` as is when `tau1 >= tau2`, otherwise caps it at
/// `mu * tau1`.
fn trim_tail(eps: &mut [f64], eps_old: &[f64], range: std::ops::Range<usize>, tau1: f64, tau2: f64, mu: f64) {
    for i in range {
        eps[i] = if tau1 >= tau2 {
            eps_old[i]
        } else {
            eps_old[i].min(mu * tau1)
        };
    }
}

pub fn update_eps(input: &EpsUpdateInput<'_>) -> Result<EpsUpdate> {
    let m = input.eps_old.len();
    let sigma = input.sigma_new;
    let eo = input.eps_old;
    let mu = input.mu;
    if sigma.len() != m {
        return Err(Error::InvalidArgument(format!("{} singular values for {m} perturbations", sigma.len())));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidArgument(format!("mu must lie in (0,1), got {mu}")));
    }
    let r_new = input.support_new.len();
    let r_old = input.support_old.len();
    if r_new > m || r_old > m {
        return Err(Error::Invariant(format!("support sizes {r_old}, {r_new} exceed {m}")));
    }
    if Support::from_sigma(sigma)? != input.support_new {
        return Err(Error::Invariant(format!(
            "declared support size {r_new} disagrees with sigma"
        )));
    }
    if let Some(i) = eo.iter().position(|&e| !(e > 0.0)) {
        return Err(Error::Invariant(format!("eps[{i}] = {} is not positive", eo[i])));
    }

    let mut e = eo.to_vec();
    let mut degenerate = false;
    let change = match r_new.cmp(&r_old) {
        std::cmp::Ordering::Less => {
            for i in 0..r_new {
                e[i] = mu * eo[i];
            }
            if r_new == 0 {
                // X^{k+1} = 0: no anchor value for the comparison, keep the
                // dropped entries.
                degenerate = true;
            } else {
                let tau1 = sigma[r_new - 1] + e[r_new - 1];
                let tau2 = eo[r_new];
                trim_tail(&mut e, eo, r_new..r_old, tau1, tau2, mu);
            }
            if r_old < m {
                let tau3 = e[r_old - 1];
                for i in r_old..m {
                    e[i] = eo[i].min(tau3);
                }
            }
            SupportChange::Shrink
        }
        std::cmp::Ordering::Greater => {
            for i in 0..r_old {
                e[i] = mu * eo[i];
            }
            let tau3 = if r_old > 0 { eo[r_old - 1] } else { f64::INFINITY };
            for i in r_old..r_new {
                e[i] = mu * eo[i].min(tau3);
            }
            if r_new < m {
                let tau1 = sigma[r_new - 1] + e[r_new - 1];
                let tau2 = eo[r_new];
                trim_tail(&mut e, eo, r_new..m, tau1, tau2, mu);
            }
            SupportChange::Grow
        }
        std::cmp::Ordering::Equal => {
            let r = r_new;
            for i in 0..r {
                e[i] = mu * eo[i];
            }
            if r > 0 && r < m {
                let tau1 = sigma[r - 1] + e[r - 1];
                let tau2 = eo[r];
                trim_tail(&mut e, eo, r..m, tau1, tau2, mu);
            }
            SupportChange::Same
        }
    };

    for v in e.iter_mut() {
        if *v < EPS_FLOOR {
            *v = EPS_FLOOR;
        }
    }

    for i in 0..m {
        if e[i] > eo[i] {
            return Err(Error::Invariant(format!(
                "eps[{i}] increased from {} to {}",
                eo[i], e[i]
            )));
        }
    }
    for i in 1..m {
        if sigma[i] + e[i] > sigma[i - 1] + e[i - 1] {
            return Err(Error::Invariant(format!(
                "sigma + eps increases at index {i}: {} > {}",
                sigma[i] + e[i],
                sigma[i - 1] + e[i - 1]
            )));
        }
    }

    Ok(EpsUpdate { eps: e, change, degenerate })
}
