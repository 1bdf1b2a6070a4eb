//! Experiment harness: synthetic grids, image restoration and certificate
//! traces, with CSV and JSON outputs.

pub mod config;
pub mod image;
pub mod output;
pub mod synth;
pub mod trace;

use rankid::Error;

use config::{Command, ExperimentConfig};

/// Exit codes: 0 success, 1 runtime error, 2 configuration error,
/// 3 at least one run failed a certificate.
pub fn run(command: &Command) -> i32 {
    match dispatch(command) {
        Ok(failures) if failures == 0 => 0,
        Ok(failures) => {
            eprintln!("{failures} run(s) failed; partial results were written");
            3
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: &Command) -> rankid::Result<usize> {
    match command {
        Command::Synth(args) => {
            let cfg = ExperimentConfig::from_synth(args)?;
            let s = synth::run_synth(&cfg)?;
            for c in &s.cells {
                println!(
                    "{:<7} alpha={:<4} r={:<3} sr={:<4} runs={} success={} success_relerr_or_reldist={} cld={} median_iter={}",
                    c.variant.name(),
                    c.alpha,
                    c.rank_true,
                    c.sr,
                    c.runs,
                    c.successes,
                    c.successes_relerr_or_reldist,
                    c.cld,
                    c.median_iterations.map_or("-".into(), |v| v.to_string())
                );
            }
            println!("summary: {}", cfg.out_dir.join("summary.json").display());
            Ok(s.failures)
        }
        Command::Image(args) => {
            let cfg = ExperimentConfig::from_image(args)?;
            let s = image::run_image(&cfg)?;
            for v in &s.variants {
                println!(
                    "{:<7} {} psnr_vs_original={} psnr_vs_target={} ranks={:?} iterations={:?}",
                    v.variant.name(),
                    v.status,
                    v.psnr_vs_original_db.map_or("inf".into(), |d| format!("{d:.3}")),
                    v.psnr_vs_target_db.map_or("inf".into(), |d| format!("{d:.3}")),
                    v.channel_ranks,
                    v.channel_iterations
                );
            }
            println!("summary: {}", cfg.out_dir.join("image_summary.json").display());
            Ok(s.failures)
        }
        Command::Trace(args) => {
            let cfg = ExperimentConfig::from_trace(args)?;
            let r = trace::run_trace(&cfg)?;
            println!(
                "{} iterations={} rank={} certificates={}",
                r.status,
                r.iterations,
                r.rank_final.map_or("-".into(), |v| v.to_string()),
                if r.checks.all_pass { "pass" } else { "FAIL" }
            );
            println!("report: {}", cfg.out_dir.join("certificates.json").display());
            Ok(usize::from(!r.checks.all_pass))
        }
    }
}
