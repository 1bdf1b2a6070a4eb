//! Image restoration: rank-r target, sampling mask, per-channel completion.
//!
//! Channels are solved on the `[0, 1]` scale and mapped back to `[0, 255]`.

use std::fs;

use rankid::datagen::{apply_mask, gen_mask, image_to_lowrank_target, load_image, save_image, ImageTensor};
use rankid::diagnostics::{psnr, write_trace_csv, IterationRecord, Psnr};
use rankid::solver::{solve, Init, StopReason, Variant};
use rankid::{Error, ProblemInstance, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{timestamp, write_json};
use crate::synth::derive_seed;

const PIXEL_SCALE: f64 = 255.0;
const MASK_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub original: ImageTensor,
    pub target: ImageTensor,
    /// Observed pixel positions, shared by all channels.
    pub mask: Vec<(usize, usize)>,
}

pub fn prepare(original: ImageTensor, cfg: &ExperimentConfig) -> Result<PreparedImage> {
    let rank = cfg.ranks[0];
    let target = image_to_lowrank_target(&original, rank)?;
    let (m, n) = target.shape();
    let mask = gen_mask(m, n, &cfg.mask_spec(cfg.srs[0], derive_seed(cfg.seed, MASK_STREAM)))?;
    Ok(PreparedImage { original, target, mask })
}

#[derive(Debug, Clone)]
pub struct ChannelResult {
    pub rank: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub variant: Variant,
    pub alpha: f64,
    pub restored: ImageTensor,
    pub channels: Vec<ChannelResult>,
    pub psnr_vs_target: Psnr,
    pub psnr_vs_original: Psnr,
}

/// Completes every channel of the masked target independently.
pub fn restore(prepared: &PreparedImage, cfg: &ExperimentConfig, variant: Variant, alpha: f64) -> Result<Restoration> {
    let solved: Vec<(rankid::Matrix, ChannelResult)> = prepared
        .target
        .channels
        .par_iter()
        .enumerate()
        .map(|(c, channel)| {
            let scaled = channel / PIXEL_SCALE;
            let lambda = cfg.lambda_for(scaled.amax());
            let instance = ProblemInstance::from_samples(&scaled, prepared.mask.clone(), lambda, cfg.p)?;
            let solver = cfg.solver_config(variant, alpha, derive_seed(cfg.seed, INIT_STREAM + c as u64));
            let out = solve(&instance, &solver, Init::Gaussian, None)?;
            Ok((
                out.x_final * PIXEL_SCALE,
                ChannelResult {
                    rank: out.rank_final,
                    iterations: out.iterations,
                    stop_reason: out.stop_reason,
                    trace: out.trace,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (mats, channels): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let restored = ImageTensor::new(mats)?.clamped();
    Ok(Restoration {
        variant,
        alpha,
        psnr_vs_target: psnr(&restored, &prepared.target)?,
        psnr_vs_original: psnr(&restored, &prepared.original)?,
        restored,
        channels,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub alpha: f64,
    pub status: String,
    pub restored_png: Option<String>,
    pub psnr_vs_target_db: Option<f64>,
    pub psnr_vs_original_db: Option<f64>,
    pub channel_ranks: Vec<usize>,
    pub channel_iterations: Vec<usize>,
    pub channel_stop_reasons: Vec<StopReason>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageSummary {
    pub generated_at: u64,
    pub config: ExperimentConfig,
    pub shape: (usize, usize),
    pub channels: usize,
    pub observed_fraction: f64,
    /// PSNR of the target against the original, the ceiling for restorations.
    pub target_vs_original_db: f64,
    pub failures: usize,
    pub variants: Vec<VariantReport>,
}

/// JSON stores infinite PSNR as null.
fn db(p: &Psnr) -> Option<f64> {
    (!p.identical).then_some(p.db)
}

pub fn run_image(cfg: &ExperimentConfig) -> Result<ImageSummary> {
    let input = cfg.input.as_ref().ok_or_else(|| Error::Config("image requires --input".into()))?;
    let prepared = prepare(load_image(input)?, cfg)?;
    fs::create_dir_all(cfg.out_dir.join("traces"))?;
    save_image(&cfg.out_dir.join("target.png"), &prepared.target)?;
    let masked = prepared.target.map_channels(|c| apply_mask(c, &prepared.mask));
    save_image(&cfg.out_dir.join("masked.png"), &masked)?;

    let pool = cfg.thread_pool()?;
    let mut reports = Vec::new();
    let mut failures = 0;
    for &variant in &cfg.variants {
        for alpha in cfg.alphas_for(variant) {
            let tag = if cfg.alphas_for(variant).len() > 1 {
                format!("{}_a{alpha}", variant.name())
            } else {
                variant.name().to_string()
            };
            match pool.install(|| restore(&prepared, cfg, variant, alpha)) {
                Ok(r) => {
                    let png = format!("restored_{tag}.png");
                    save_image(&cfg.out_dir.join(&png), &r.restored)?;
                    for (c, ch) in r.channels.iter().enumerate() {
                        let file = fs::File::create(cfg.out_dir.join("traces").join(format!("{tag}_c{c}.csv")))?;
                        write_trace_csv(std::io::BufWriter::new(file), &ch.trace)?;
                    }
                    reports.push(VariantReport {
                        variant,
                        alpha,
                        status: "completed".into(),
                        restored_png: Some(png),
                        psnr_vs_target_db: db(&r.psnr_vs_target),
                        psnr_vs_original_db: db(&r.psnr_vs_original),
                        channel_ranks: r.channels.iter().map(|c| c.rank).collect(),
                        channel_iterations: r.channels.iter().map(|c| c.iterations).collect(),
                        channel_stop_reasons: r.channels.iter().map(|c| c.stop_reason).collect(),
                    });
                }
                Err(e @ (Error::CertifiedFailure { .. } | Error::Numerical(_) | Error::Invariant(_))) => {
                    failures += 1;
                    reports.push(VariantReport {
                        variant,
                        alpha,
                        status: format!("failed: {e}"),
                        restored_png: None,
                        psnr_vs_target_db: None,
                        psnr_vs_original_db: None,
                        channel_ranks: vec![],
                        channel_iterations: vec![],
                        channel_stop_reasons: vec![],
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }

    let (m, n) = prepared.target.shape();
    let summary = ImageSummary {
        generated_at: timestamp(),
        config: cfg.clone(),
        shape: (m, n),
        channels: prepared.target.channels.len(),
        observed_fraction: prepared.mask.len() as f64 / (m * n) as f64,
        target_vs_original_db: psnr(&prepared.target, &prepared.original)?.db,
        failures,
        variants: reports,
    };
    write_json(&cfg.out_dir.join("image_summary.json"), &summary)?;
    Ok(summary)
}
