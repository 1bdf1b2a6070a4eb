//! Extrapolated iteratively reweighted nuclear norm solver with adaptive
//! perturbations.
//!
//! Each iteration linearizes the smoothed penalty at the current iterate,
//! takes a proximal step from an extrapolated point, solves the resulting
//! weighted thresholding problem in closed form and shrinks the
//! perturbations. Descent, weight order and subproblem optimality are
//! certified on every iteration; a breach aborts with the trace so far.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{optimality_error, rel_dist, rel_err, IterationCertificate, IterationRecord};
use crate::eps_update::{update_eps, EpsUpdateInput, Support};
use crate::error::{Error, Result};
use crate::model::{schatten_p, Matrix, ProblemInstance};
use crate::regularizer::{compute_weights, first_descent, smoothed_penalty};
use crate::subproblem::{solve_weighted_svt, subproblem_kkt_residual, SubproblemInput};
use crate::svd::{rank_of, svd_ordered, RankMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Extrapolation plus adaptive perturbations.
    Eirnri,
    /// Adaptive perturbations without extrapolation.
    Irnri,
    /// Fixed perturbations without extrapolation.
    Pirnn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Eirnri => "eirnri",
            Variant::Irnri => "irnri",
            Variant::Pirnn => "pirnn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eirnri" => Ok(Variant::Eirnri),
            "irnri" => Ok(Variant::Irnri),
            "pirnn" => Ok(Variant::Pirnn),
            other => Err(Error::Config(format!("unknown variant '{other}' (expected eirnri, irnri or pirnn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub beta: f64,
    pub mu: f64,
    /// Extrapolation weight; only the extrapolated variant uses it.
    pub alpha: f64,
    pub eps0: f64,
    /// Perturbation held by the fixed-perturbation variant.
    pub eps_fixed: f64,
    pub opttol: f64,
    pub klopt: f64,
    pub itmax: usize,
    pub variant: Variant,
    /// Selects the extrapolation cap: 1 for convex losses.
    pub convex_loss: bool,
    /// Seed of the Gaussian starting point.
    pub seed: u64,
    /// Record every `trace_every`-th iteration (the last one is always kept).
    pub trace_every: usize,
    /// Keep the full perturbation vector of every iteration.
    pub record_eps: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1.1,
            mu: 0.1,
            alpha: 0.7,
            eps0: 1.0,
            eps_fixed: 1e-3,
            opttol: 1e-5,
            klopt: 1e-7,
            itmax: 1000,
            variant: Variant::Eirnri,
            convex_loss: true,
            seed: 0,
            trace_every: 1,
            record_eps: false,
        }
    }
}

impl SolverConfig {
    /// Extrapolation weight actually applied by the selected variant.
    pub fn effective_alpha(&self) -> f64 {
        match self.variant {
            Variant::Eirnri => self.alpha,
            Variant::Irnri | Variant::Pirnn => 0.0,
        }
    }

    /// Checks every parameter and returns the extrapolation cap.
    pub fn validate(&self, lipschitz: f64) -> Result<f64> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("beta", self.beta)?;
        positive("eps0", self.eps0)?;
        positive("eps_fixed", self.eps_fixed)?;
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config(format!("mu must lie in (0, 1), got {}", self.mu)));
        }
        if !(self.opttol >= 0.0) || !(self.klopt >= 0.0) {
            return Err(Error::Config("opttol and klopt must be nonnegative".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Config("trace_every must be at least 1".into()));
        }
        validate_alpha(self.effective_alpha(), self.beta, lipschitz, self.convex_loss)
    }
}

/// Largest admissible extrapolation weight (exclusive).
pub fn alpha_cap(beta: f64, lipschitz: f64, convex_loss: bool) -> f64 {
    if convex_loss {
        1.0
    } else {
        (beta / (beta + 3.0 * lipschitz)).sqrt()
    }
}

/// Returns the cap after checking `beta > L` and `0 <= alpha < cap`.
pub fn validate_alpha(alpha: f64, beta: f64, lipschitz: f64, convex_loss: bool) -> Result<f64> {
    if !(beta > lipschitz) {
        return Err(Error::Config(format!(
            "beta = {beta} must exceed the gradient Lipschitz constant {lipschitz}"
        )));
    }
    let cap = alpha_cap(beta, lipschitz, convex_loss);
    if alpha == 0.0 {
        return Ok(cap);
    }
    if !(alpha > 0.0 && alpha < cap) {
        let branch = if convex_loss {
            "convex branch, cap 1".to_string()
        } else {
            format!("nonconvex branch, cap sqrt(beta/(beta+3L)) = {cap:.6}")
        };
        return Err(Error::Config(format!("alpha = {alpha} violates the {branch}")));
    }
    Ok(cap)
}

/// How the merit decrease is certified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecreaseRule {
    /// `H^k - H^{k+1} >= c ||X^k - X^{k-1}||^2`.
    Sufficient { c: f64 },
    /// `H^{k+1} <= H^k`; used when alpha is only admissible for convex losses.
    NonIncrease,
}

impl DecreaseRule {
    pub fn for_alpha(alpha: f64, beta: f64, lipschitz: f64) -> Self {
        let nonconvex_cap = alpha_cap(beta, lipschitz, false);
        if alpha < nonconvex_cap {
            DecreaseRule::Sufficient {
                c: 0.5 * beta * (1.0 - alpha * alpha * (3.0 * lipschitz + beta) / beta),
            }
        } else {
            DecreaseRule::NonIncrease
        }
    }

    pub fn constant(self) -> f64 {
        match self {
            DecreaseRule::Sufficient { c } => c,
            DecreaseRule::NonIncrease => 0.0,
        }
    }
}

/// Starting point.
#[derive(Debug, Clone)]
pub enum Init {
    /// i.i.d. standard normal entries from `SolverConfig::seed`.
    Gaussian,
    Zero,
    /// In the caller's orientation.
    Given(Matrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    OpttolRelerr,
    OpttolReldist,
    KloptStep,
    Itmax,
}

/// Worst certificate values over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub decrease_rule: DecreaseRule,
    pub slack: f64,
    pub min_decrease_margin: f64,
    pub max_surrogate_gap: f64,
    pub max_subproblem_kkt: f64,
    pub weight_order_violations: usize,
    pub final_optimality_error: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// In the caller's orientation.
    pub x_final: Matrix,
    pub rank_final: usize,
    pub sigma_final: Vec<f64>,
    pub eps_final: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<IterationRecord>,
    /// `eps^{k+1}` after every iteration when `record_eps` is set.
    pub eps_history: Vec<Vec<f64>>,
    pub certificates: CertificateSummary,
}

/// Runs the solver with the constant extrapolation schedule.
pub fn solve(
    instance: &ProblemInstance,
    config: &SolverConfig,
    init: Init,
    x_star: Option<&Matrix>,
) -> Result<SolveOutcome> {
    let alpha = config.effective_alpha();
    solve_with_schedule(instance, config, init, x_star, |_| alpha)
}

/// Runs the solver with `alpha_k = schedule(k)`; every value is checked
/// against the cap and the decrease certificate uses the largest value seen.
pub fn solve_with_schedule<S: Fn(usize) -> f64>(
    instance: &ProblemInstance,
    config: &SolverConfig,
    init: Init,
    x_star: Option<&Matrix>,
    schedule: S,
) -> Result<SolveOutcome> {
    let lipschitz = instance.lipschitz();
    config.validate(lipschitz)?;
    if config.variant != Variant::Eirnri && schedule(0) != 0.0 {
        return Err(Error::Config(format!("variant {} does not extrapolate", config.variant.name())));
    }
    let (m, n) = (instance.m(), instance.n());
    let beta = config.beta;
    let lambda = instance.lambda();
    let p = instance.p();
    let threshold_scale = lambda / (2.0 * beta);

    let x_star = match x_star {
        Some(xs) => {
            let xs = instance.to_internal(xs)?;
            if xs.norm() == 0.0 {
                return Err(Error::InvalidArgument("ground truth is the zero matrix".into()));
            }
            Some(xs)
        }
        None => None,
    };

    let x0 = match init {
        Init::Gaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            Matrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
        }
        Init::Zero => Matrix::zeros(m, n),
        Init::Given(x) => instance.to_internal(&x)?,
    };
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("starting point contains NaN or Inf".into()));
    }

    // Singular values of a raw decomposition below the relative cutoff are
    // treated as exact zeros so that the support is a leading block.
    let mut sigma = svd_ordered(&x0)?.s;
    let r0 = rank_of(&sigma, RankMode::Relative);
    for s in sigma.iter_mut().skip(r0) {
        *s = 0.0;
    }
    let mut support = Support::new(r0);
    let mut eps = match config.variant {
        Variant::Pirnn => vec![config.eps_fixed; m],
        _ => vec![config.eps0; m],
    };

    let mut x_prev = x0.clone();
    let mut x_cur = x0;
    let h0 = instance.loss_value(&x_cur)? + smoothed_penalty(&sigma, &eps, lambda, p)?;
    let slack = 1e-9 * h0.abs().max(1.0);
    let mut h_cur = h0;
    let mut prev_step_sq = 0.0;
    let mut alpha_max = 0.0f64;

    let mut trace = Vec::new();
    let mut eps_history = Vec::new();
    let mut summary = CertificateSummary {
        decrease_rule: DecreaseRule::for_alpha(0.0, beta, lipschitz),
        slack,
        min_decrease_margin: f64::INFINITY,
        max_surrogate_gap: f64::NEG_INFINITY,
        max_subproblem_kkt: 0.0,
        weight_order_violations: 0,
        final_optimality_error: f64::NAN,
    };
    let fail = |k: usize, reason: String, trace: Vec<IterationRecord>| Error::CertifiedFailure {
        iteration: k,
        reason,
        trace,
    };

    let mut k = 0;
    loop {
        let alpha = schedule(k);
        validate_alpha(alpha, beta, lipschitz, config.convex_loss)?;
        alpha_max = alpha_max.max(alpha);
        let rule = DecreaseRule::for_alpha(alpha_max, beta, lipschitz);

        let weights = compute_weights(&sigma, &eps, p)?;
        let descent = first_descent(&weights);
        let weights_ordered = descent.is_none();
        if let Some(i) = descent {
            return Err(fail(
                k,
                format!("weights descend at index {i}: {} > {}", weights[i], weights[i + 1]),
                trace,
            ));
        }

        let y = if alpha == 0.0 {
            x_cur.clone()
        } else {
            &x_cur + (&x_cur - &x_prev) * alpha
        };
        let grad_y = instance.loss_gradient(&y)?;
        let step_matrix = (&x_cur + &y) * 0.5 - grad_y * (1.0 / (2.0 * beta));
        let input = SubproblemInput {
            step_matrix,
            weights,
            threshold_scale,
        };
        let sol = solve_weighted_svt(&input)?;
        if sol.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("iterate {} contains NaN or Inf", k + 1)));
        }
        let sigma_new = sol.svd.s.clone();
        let support_new = Support::from_sigma(&sigma_new)?;

        let eps_new = match config.variant {
            Variant::Pirnn => eps.clone(),
            _ => {
                update_eps(&EpsUpdateInput {
                    sigma_new: &sigma_new,
                    support_new,
                    support_old: support,
                    eps_old: &eps,
                    mu: config.mu,
                })?
                .eps
            }
        };

        let f_new = instance.loss_value(&sol.x)?;
        let penalty = schatten_p(&sigma_new, lambda, p);
        let step = &sol.x - &x_cur;
        let step_fro = step.norm();
        let step_inf = step.amax();
        let h_new = f_new + 0.5 * beta * step_fro * step_fro + smoothed_penalty(&sigma_new, &eps_new, lambda, p)?;

        let decrease_margin = h_cur - h_new - rule.constant() * prev_step_sq;
        let surrogate = |x: &Matrix, s: &[f64]| {
            beta * (x - &input.step_matrix).norm_squared()
                + lambda * s.iter().zip(&input.weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let surrogate_gap = surrogate(&sol.x, &sigma_new) - surrogate(&x_cur, &sigma);
        let kkt = subproblem_kkt_residual(&sol, &input, beta, lambda)?;
        let opt_err = optimality_error(instance, &sol, &input.weights, beta)?;
        let dist = rel_dist(instance, &sol.x, &sol.svd, lambda, p)?;
        let err = match &x_star {
            Some(xs) => Some(rel_err(&sol.x, xs)?),
            None => None,
        };

        let r_new = support_new.len();
        let record = IterationRecord {
            k: k + 1,
            f_val: f_new,
            penalty_val: penalty,
            objective: f_new + penalty,
            merit_h: h_new,
            rel_err: err,
            rel_dist: dist.value,
            rank: r_new,
            step_fro,
            step_inf,
            eps_max_support: eps_new[..r_new].iter().copied().reduce(f64::max),
            eps_max_zeroset: eps_new[r_new..].iter().copied().reduce(f64::max),
            alpha_used: alpha,
            certificate: IterationCertificate {
                decrease_margin,
                surrogate_gap,
                subproblem_kkt: kkt,
                step_matrix_norm: input.step_matrix.norm(),
                optimality_error: opt_err,
                weights_ordered,
            },
        };

        summary.decrease_rule = rule;
        summary.min_decrease_margin = summary.min_decrease_margin.min(decrease_margin);
        summary.max_surrogate_gap = summary.max_surrogate_gap.max(surrogate_gap);
        summary.max_subproblem_kkt = summary.max_subproblem_kkt.max(kkt);
        summary.final_optimality_error = opt_err;

        k += 1;
        let stop = if err.is_some_and(|e| e <= config.opttol) {
            Some(StopReason::OpttolRelerr)
        } else if dist.value <= config.opttol {
            Some(StopReason::OpttolReldist)
        } else if step_inf <= config.klopt {
            Some(StopReason::KloptStep)
        } else if k >= config.itmax {
            Some(StopReason::Itmax)
        } else {
            None
        };

        let breach = if decrease_margin < -slack {
            Some(format!(
                "merit decrease {:.6e} below the certified bound by {:.6e}",
                h_cur - h_new,
                -decrease_margin
            ))
        } else if surrogate_gap > slack {
            Some(format!("surrogate increased by {surrogate_gap:.6e}"))
        } else if !record.certificate.subproblem_ok() {
            Some(format!("thresholding step residual {kkt:.6e}"))
        } else {
            None
        };
        if (k - 1) % config.trace_every == 0 || stop.is_some() || breach.is_some() {
            trace.push(record);
        }
        if let Some(reason) = breach {
            return Err(fail(k, reason, trace));
        }
        if config.record_eps {
            eps_history.push(eps_new.clone());
        }

        x_prev = std::mem::replace(&mut x_cur, sol.x);
        prev_step_sq = step_fro * step_fro;
        h_cur = h_new;
        sigma = sigma_new;
        support = support_new;
        eps = eps_new;

        if let Some(stop_reason) = stop {
            let rank_final = rank_of(&sigma, RankMode::Exact);
            return Ok(SolveOutcome {
                x_final: instance.to_user(&x_cur),
                rank_final,
                sigma_final: sigma,
                eps_final: eps,
                iterations: k,
                stop_reason,
                trace,
                eps_history,
                certificates: summary,
            });
        }
    }
}
