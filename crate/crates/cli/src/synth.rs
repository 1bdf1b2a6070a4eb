//! Seeded synthetic recovery experiments.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankid::datagen::{gen_lowrank, gen_mask};
use rankid::diagnostics::write_trace_csv;
use rankid::solver::{solve, Init, SolveOutcome, StopReason, Variant};
use rankid::{Error, Matrix, ProblemInstance, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{timestamp, write_json};

/// Success bar on the final relative error.
pub const SUCCESS_TOL: f64 = 1e-5;

/// Independent seed for one purpose (`stream`) of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const TRUTH_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

#[derive(Debug, Clone)]
pub struct SynthProblem {
    pub instance: ProblemInstance,
    pub truth: Matrix,
    /// Seed of the Gaussian starting point.
    pub init_seed: u64,
}

/// Ground truth, mask and starting point all derive from `seed`.
pub fn synth_problem(cfg: &ExperimentConfig, rank: usize, sr: f64, seed: u64) -> Result<SynthProblem> {
    let truth = gen_lowrank(cfg.m, cfg.n, rank, derive_seed(seed, TRUTH_STREAM))?;
    let mask = gen_mask(cfg.m, cfg.n, &cfg.mask_spec(sr, derive_seed(seed, MASK_STREAM)))?;
    let lambda = cfg.lambda_for(truth.amax());
    let instance = ProblemInstance::from_samples(&truth, mask, lambda, cfg.p)?;
    Ok(SynthProblem {
        instance,
        truth,
        init_seed: derive_seed(seed, INIT_STREAM),
    })
}

/// Solves `problem` with the given variant and extrapolation weight.
pub fn run_problem(
    cfg: &ExperimentConfig,
    problem: &SynthProblem,
    variant: Variant,
    alpha: f64,
    record_eps: bool,
) -> Result<SolveOutcome> {
    let mut solver = cfg.solver_config(variant, alpha, problem.init_seed);
    solver.record_eps = record_eps;
    solve(&problem.instance, &solver, Init::Gaussian, Some(&problem.truth))
}

pub fn trace_csv_bytes(outcome_trace: &[rankid::diagnostics::IterationRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, outcome_trace).expect("writing to memory");
    buf
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub trace_file: String,
    pub variant: Variant,
    pub alpha: f64,
    pub rank_true: usize,
    pub sr: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub rank_final: Option<usize>,
    pub final_rel_err: Option<f64>,
    pub final_rel_dist: Option<f64>,
    pub final_optimality_error: Option<f64>,
    /// First iteration with relative distance at or below the tolerance.
    pub iterations_to_opttol: Option<usize>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    CertifiedFailure,
    Error,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.final_rel_err.is_some_and(|e| e <= SUCCESS_TOL)
    }

    pub fn succeeded_either(&self) -> bool {
        self.succeeded() || self.final_rel_dist.is_some_and(|d| d <= SUCCESS_TOL)
    }

    pub fn correct_rank(&self) -> bool {
        self.rank_final == Some(self.rank_true)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub alpha: f64,
    pub rank_true: usize,
    pub sr: f64,
    pub runs: usize,
    /// Final relative error at or below 1e-5.
    pub successes: usize,
    /// Final relative error or relative distance at or below 1e-5.
    pub successes_relerr_or_reldist: usize,
    /// Final rank equal to the ground-truth rank.
    pub cld: usize,
    pub mean_final_rel_err: Option<f64>,
    pub mean_final_rel_err_successes: Option<f64>,
    pub median_iterations: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub generated_at: u64,
    pub config: ExperimentConfig,
    pub total_runs: usize,
    pub trace_files: usize,
    pub failures: usize,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, Copy)]
struct Job {
    variant: Variant,
    alpha: f64,
    rank: usize,
    sr: f64,
    seed: u64,
}

fn trace_name(job: &Job) -> String {
    format!(
        "{}_a{}_r{}_sr{}_s{}.csv",
        job.variant.name(),
        job.alpha,
        job.rank,
        job.sr,
        job.seed
    )
}

fn run_job(cfg: &ExperimentConfig, job: &Job, trace_dir: &Path) -> Result<RunRecord> {
    let name = trace_name(job);
    let mut record = RunRecord {
        trace_file: format!("traces/{name}"),
        variant: job.variant,
        alpha: job.alpha,
        rank_true: job.rank,
        sr: job.sr,
        seed: job.seed,
        status: RunStatus::Completed,
        iterations: 0,
        stop_reason: None,
        rank_final: None,
        final_rel_err: None,
        final_rel_dist: None,
        final_optimality_error: None,
        iterations_to_opttol: None,
        message: None,
    };
    let problem = synth_problem(cfg, job.rank, job.sr, job.seed)?;
    let (trace, outcome) = match run_problem(cfg, &problem, job.variant, job.alpha, false) {
        Ok(out) => (out.trace.clone(), Some(out)),
        Err(Error::CertifiedFailure { iteration, reason, trace }) => {
            record.status = RunStatus::CertifiedFailure;
            record.message = Some(format!("iteration {iteration}: {reason}"));
            (trace, None)
        }
        Err(e) => {
            record.status = RunStatus::Error;
            record.message = Some(e.to_string());
            (Vec::new(), None)
        }
    };
    fs::write(trace_dir.join(&name), trace_csv_bytes(&trace))?;
    record.iterations = trace.last().map_or(0, |r| r.k);
    record.iterations_to_opttol = trace.iter().find(|r| r.rel_dist <= cfg.opttol).map(|r| r.k);
    if let Some(out) = outcome {
        let last = out.trace.last().expect("at least one iteration");
        record.stop_reason = Some(out.stop_reason);
        record.rank_final = Some(out.rank_final);
        record.final_rel_err = last.rel_err;
        record.final_rel_dist = Some(last.rel_dist);
        record.final_optimality_error = Some(last.certificate.optimality_error);
    }
    Ok(record)
}

/// Runs the full grid and writes traces plus `summary.json` under the output
/// directory. Returns the summary; runs that fail are recorded, not raised.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<SynthSummary> {
    let trace_dir = cfg.out_dir.join("traces");
    fs::create_dir_all(&trace_dir)?;

    let mut jobs = Vec::new();
    for &variant in &cfg.variants {
        for alpha in cfg.alphas_for(variant) {
            for &rank in &cfg.ranks {
                for &sr in &cfg.srs {
                    for i in 0..cfg.seeds {
                        jobs.push(Job {
                            variant,
                            alpha,
                            rank,
                            sr,
                            seed: cfg.seed + i as u64,
                        });
                    }
                }
            }
        }
    }

    let pool = cfg.thread_pool()?;
    let records: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(cfg, job, &trace_dir))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut cells: Vec<CellSummary> = Vec::new();
    for job in jobs.iter().filter(|j| j.seed == cfg.seed) {
        let runs: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.variant == job.variant && r.alpha == job.alpha && r.rank_true == job.rank && r.sr == job.sr)
            .collect();
        cells.push(CellSummary {
            variant: job.variant,
            alpha: job.alpha,
            rank_true: job.rank,
            sr: job.sr,
            runs: runs.len(),
            successes: runs.iter().filter(|r| r.succeeded()).count(),
            successes_relerr_or_reldist: runs.iter().filter(|r| r.succeeded_either()).count(),
            cld: runs.iter().filter(|r| r.correct_rank()).count(),
            mean_final_rel_err: mean(runs.iter().filter_map(|r| r.final_rel_err)),
            mean_final_rel_err_successes: mean(runs.iter().filter(|r| r.succeeded()).filter_map(|r| r.final_rel_err)),
            median_iterations: median(
                runs.iter()
                    .filter(|r| r.status == RunStatus::Completed)
                    .map(|r| r.iterations as f64)
                    .collect(),
            ),
            failures: runs.iter().filter(|r| r.status != RunStatus::Completed).count(),
        });
    }

    let summary = SynthSummary {
        generated_at: timestamp(),
        config: cfg.clone(),
        total_runs: records.len(),
        trace_files: records.iter().filter(|r| cfg.out_dir.join(&r.trace_file).is_file()).count(),
        failures: records.iter().filter(|r| r.status != RunStatus::Completed).count(),
        cells,
        runs: records,
    };
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
