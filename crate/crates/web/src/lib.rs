//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers or arrays and returns a JSON string.

use rankid::eps_update::{update_eps, EpsUpdateInput, Support, SupportChange};
use rankid::regularizer::compute_weights;
use rankid::solver::{solve, Init, SolverConfig, Variant};
use rankid::{gen_lowrank, gen_mask, MaskSpec, ProblemInstance};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct CompletionRun {
    pub iterations: usize,
    pub stop_reason: String,
    pub rank_final: usize,
    pub rank: Vec<usize>,
    pub rel_err: Vec<f64>,
    pub rel_dist: Vec<f64>,
    pub eps_support: Vec<Option<f64>>,
    pub eps_zeroset: Vec<Option<f64>>,
    pub sigma_final: Vec<f64>,
}

/// Recovers a seeded `m x n` rank-`rank` matrix from `sr` of its entries.
#[allow(clippy::too_many_arguments)]
pub fn completion_run(
    m: usize,
    n: usize,
    rank: usize,
    sr: f64,
    lambda_rel: f64,
    p: f64,
    alpha: f64,
    variant: &str,
    itmax: usize,
    seed: u64,
) -> rankid::Result<CompletionRun> {
    let variant: Variant = variant.parse()?;
    let truth = gen_lowrank(m, n, rank, seed)?;
    let mask = gen_mask(
        m,
        n,
        &MaskSpec::RandomUniform {
            sampling_ratio: sr,
            seed: seed.wrapping_add(1),
        },
    )?;
    let instance = ProblemInstance::from_samples(&truth, mask, lambda_rel * truth.amax(), p)?;
    let config = SolverConfig {
        alpha,
        variant,
        itmax,
        seed: seed.wrapping_add(2),
        ..SolverConfig::default()
    };
    let out = solve(&instance, &config, Init::Gaussian, Some(&truth))?;
    Ok(CompletionRun {
        iterations: out.iterations,
        stop_reason: format!("{:?}", out.stop_reason),
        rank_final: out.rank_final,
        rank: out.trace.iter().map(|r| r.rank).collect(),
        rel_err: out.trace.iter().map(|r| r.rel_err.unwrap_or(f64::NAN)).collect(),
        rel_dist: out.trace.iter().map(|r| r.rel_dist).collect(),
        eps_support: out.trace.iter().map(|r| r.eps_max_support).collect(),
        eps_zeroset: out.trace.iter().map(|r| r.eps_max_zeroset).collect(),
        sigma_final: out.sigma_final,
    })
}

#[derive(Debug, Serialize)]
pub struct Thresholding {
    pub weights: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub output: Vec<f64>,
    pub rank: usize,
}

/// Weighted thresholding of singular values `step_sigma` (non-increasing)
/// with weights linearized at `sigma + eps`.
pub fn threshold_values(
    step_sigma: &[f64],
    sigma: &[f64],
    eps: &[f64],
    lambda: f64,
    beta: f64,
    p: f64,
) -> rankid::Result<Thresholding> {
    if step_sigma.len() != sigma.len() {
        return Err(rankid::Error::InvalidArgument("step and current values differ in length".into()));
    }
    let weights = compute_weights(sigma, eps, p)?;
    let thresholds: Vec<f64> = weights.iter().map(|w| lambda * w / (2.0 * beta)).collect();
    let output: Vec<f64> = step_sigma.iter().zip(&thresholds).map(|(s, t)| (s - t).max(0.0)).collect();
    let rank = output.iter().filter(|&&v| v > 0.0).count();
    Ok(Thresholding {
        weights,
        thresholds,
        output,
        rank,
    })
}

#[derive(Debug, Serialize)]
pub struct EpsStep {
    pub eps: Vec<f64>,
    pub change: String,
    pub degenerate: bool,
}

/// One perturbation update from a support of size `support_old` to the
/// support of `sigma_new`.
pub fn eps_step(sigma_new: &[f64], eps_old: &[f64], support_old: usize, mu: f64) -> rankid::Result<EpsStep> {
    let support_new = Support::from_sigma(sigma_new)?;
    let out = update_eps(&EpsUpdateInput {
        sigma_new,
        support_new,
        support_old: Support::new(support_old),
        eps_old,
        mu,
    })?;
    Ok(EpsStep {
        eps: out.eps,
        change: match out.change {
            SupportChange::Shrink => "shrink",
            SupportChange::Grow => "grow",
            SupportChange::Same => "same",
        }
        .into(),
        degenerate: out.degenerate,
    })
}

fn to_js<T: Serialize>(r: rankid::Result<T>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen(js_name = completionRun)]
#[allow(clippy::too_many_arguments)]
pub fn completion_run_js(
    m: usize,
    n: usize,
    rank: usize,
    sr: f64,
    lambda_rel: f64,
    p: f64,
    alpha: f64,
    variant: &str,
    itmax: usize,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(completion_run(m, n, rank, sr, lambda_rel, p, alpha, variant, itmax, seed as u64))
}

#[wasm_bindgen(js_name = thresholdValues)]
pub fn threshold_values_js(
    step_sigma: Vec<f64>,
    sigma: Vec<f64>,
    eps: Vec<f64>,
    lambda: f64,
    beta: f64,
    p: f64,
) -> Result<String, JsValue> {
    to_js(threshold_values(&step_sigma, &sigma, &eps, lambda, beta, p))
}

#[wasm_bindgen(js_name = epsStep)]
pub fn eps_step_js(sigma_new: Vec<f64>, eps_old: Vec<f64>, support_old: usize, mu: f64) -> Result<String, JsValue> {
    to_js(eps_step(&sigma_new, &eps_old, support_old, mu))
}
