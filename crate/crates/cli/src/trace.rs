//! Single solve with every per-iteration certificate written out.

use std::fs;
use std::io::Write;

use rankid::datagen::InstanceSnapshot;
use rankid::diagnostics::{write_trace_csv, IterationCertificate, IterationRecord};
use rankid::solver::{solve, CertificateSummary, DecreaseRule, Init, SolveOutcome, StopReason};
use rankid::{Error, Matrix, ProblemInstance, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{timestamp, write_json};
use crate::synth::{derive_seed, synth_problem};

/// Relative bound on the final optimality error of a converged run.
pub const OPTIMALITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub pass: bool,
    pub worst: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Checks {
    pub merit_decrease: Check,
    pub surrogate_decrease: Check,
    pub subproblem_kkt: Check,
    pub weight_order: Check,
    /// Only judged when the run stopped on a tolerance.
    pub optimality_error: Option<Check>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationCheck {
    pub k: usize,
    pub rank: usize,
    pub merit_h: f64,
    #[serde(flatten)]
    pub certificate: IterationCertificate,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub generated_at: u64,
    pub config: ExperimentConfig,
    pub status: String,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub rank_final: Option<usize>,
    pub decrease_rule: DecreaseRule,
    pub slack: f64,
    pub observed_norm: f64,
    pub checks: Checks,
    pub per_iteration: Vec<IterationCheck>,
}

/// Judges a trace against the certificate bounds.
pub fn check_trace(
    trace: &[IterationRecord],
    slack: f64,
    observed_norm: f64,
    converged: bool,
) -> Checks {
    let fold = |f: &dyn Fn(&IterationCertificate) -> f64, init: f64, max: bool| {
        trace.iter().map(|r| f(&r.certificate)).fold(init, |a, b| if max { a.max(b) } else { a.min(b) })
    };
    let min_margin = fold(&|c| c.decrease_margin, f64::INFINITY, false);
    let max_gap = fold(&|c| c.surrogate_gap, f64::NEG_INFINITY, true);
    let worst_kkt = fold(&|c| c.subproblem_kkt / (1e-8 * c.step_matrix_norm.max(1.0)), 0.0, true);
    let disordered = trace.iter().filter(|r| !r.certificate.weights_ordered).count() as f64;
    let merit_decrease = Check {
        pass: min_margin >= -slack,
        worst: min_margin,
        bound: -slack,
    };
    let surrogate_decrease = Check {
        pass: max_gap <= slack,
        worst: max_gap,
        bound: slack,
    };
    let subproblem_kkt = Check {
        pass: trace.iter().all(|r| r.certificate.subproblem_ok()),
        worst: worst_kkt,
        bound: 1.0,
    };
    let weight_order = Check {
        pass: disordered == 0.0,
        worst: disordered,
        bound: 0.0,
    };
    let optimality_error = match (converged, trace.last()) {
        (true, Some(last)) => {
            let bound = OPTIMALITY_TOL * observed_norm;
            Some(Check {
                pass: last.certificate.optimality_error <= bound,
                worst: last.certificate.optimality_error,
                bound,
            })
        }
        _ => None,
    };
    let all_pass = merit_decrease.pass
        && surrogate_decrease.pass
        && subproblem_kkt.pass
        && weight_order.pass
        && optimality_error.as_ref().is_none_or(|c| c.pass);
    Checks {
        merit_decrease,
        surrogate_decrease,
        subproblem_kkt,
        weight_order,
        optimality_error,
        all_pass,
    }
}

fn load_problem(cfg: &ExperimentConfig) -> Result<(ProblemInstance, Option<Matrix>, u64)> {
    match &cfg.instance {
        Some(path) => {
            let snap = InstanceSnapshot::read(path)?;
            Ok((snap.instance()?, snap.ground_truth()?, derive_seed(cfg.seed, 3)))
        }
        None => {
            let p = synth_problem(cfg, cfg.ranks[0], cfg.srs[0], cfg.seed)?;
            Ok((p.instance, Some(p.truth), p.init_seed))
        }
    }
}

fn write_eps_csv(path: &std::path::Path, history: &[Vec<f64>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let m = history.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("k".to_string()).chain((0..m).map(|i| format!("eps_{i}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for (k, eps) in history.iter().enumerate() {
        let row: Vec<String> = eps.iter().map(|e| format!("{e:.16e}")).collect();
        writeln!(out, "{},{}", k + 1, row.join(","))?;
    }
    Ok(())
}

/// Runs one solve and writes `trace.csv`, `eps.csv` and `certificates.json`.
/// Returns the report; a certificate breach is reported through `all_pass`.
pub fn run_trace(cfg: &ExperimentConfig) -> Result<CertificateReport> {
    let (instance, truth, init_seed) = load_problem(cfg)?;
    let variant = cfg.variants[0];
    let alpha = cfg.alphas_for(variant)[0];
    let mut solver = cfg.solver_config(variant, alpha, init_seed);
    solver.record_eps = true;
    solver.validate(instance.lipschitz())?;
    fs::create_dir_all(&cfg.out_dir)?;
    if let Some(path) = &cfg.save_instance {
        InstanceSnapshot::capture(&instance, truth.as_ref())?.write(path)?;
    }

    let result = solve(&instance, &solver, Init::Gaussian, truth.as_ref());
    let (trace, outcome, status): (Vec<IterationRecord>, Option<SolveOutcome>, String) = match result {
        Ok(out) => (out.trace.clone(), Some(out), "completed".into()),
        Err(Error::CertifiedFailure { iteration, reason, trace }) => {
            (trace, None, format!("certificate failed at iteration {iteration}: {reason}"))
        }
        Err(e) => return Err(e),
    };

    let file = fs::File::create(cfg.out_dir.join("trace.csv"))?;
    write_trace_csv(std::io::BufWriter::new(file), &trace)?;
    if let Some(out) = &outcome {
        write_eps_csv(&cfg.out_dir.join("eps.csv"), &out.eps_history)?;
    }

    let h0 = trace.first().map_or(0.0, |r| r.merit_h);
    let summary: Option<&CertificateSummary> = outcome.as_ref().map(|o| &o.certificates);
    let slack = summary.map_or(1e-9 * h0.abs().max(1.0), |s| s.slack);
    let converged = outcome
        .as_ref()
        .is_some_and(|o| matches!(o.stop_reason, StopReason::OpttolRelerr | StopReason::OpttolReldist));
    let mut checks = check_trace(&trace, slack, instance.observed_norm(), converged);
    if outcome.is_none() {
        checks.all_pass = false;
    }
    let report = CertificateReport {
        generated_at: timestamp(),
        config: cfg.clone(),
        status,
        iterations: trace.last().map_or(0, |r| r.k),
        stop_reason: outcome.as_ref().map(|o| o.stop_reason),
        rank_final: outcome.as_ref().map(|o| o.rank_final),
        decrease_rule: summary.map_or(DecreaseRule::for_alpha(alpha, solver.beta, instance.lipschitz()), |s| s.decrease_rule),
        slack,
        observed_norm: instance.observed_norm(),
        checks,
        per_iteration: trace
            .iter()
            .map(|r| IterationCheck {
                k: r.k,
                rank: r.rank,
                merit_h: r.merit_h,
                certificate: r.certificate,
            })
            .collect(),
    };
    write_json(&cfg.out_dir.join("certificates.json"), &report)?;
    Ok(report)
}
