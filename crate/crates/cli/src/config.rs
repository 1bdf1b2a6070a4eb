//! Command-line flags and the effective experiment configuration.
//!
//! Values come from the subcommand defaults, then an optional JSON config
//! file, then explicit flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankid::datagen::{MaskSpec, Rect};
use rankid::solver::{SolverConfig, Variant};
use rankid::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "rankid", version, about = "Schatten-p matrix completion with rank identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Seeded synthetic recovery experiments over a grid of ranks and sampling ratios.
    Synth(SynthArgs),
    /// Low-rank image restoration from a masked PNG.
    Image(ImageArgs),
    /// One solve with full per-iteration certificates.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Random,
    Block,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// JSON file with configuration values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Absolute regularization weight.
    #[arg(long, conflicts_with = "lambda_rel")]
    pub lambda: Option<f64>,
    /// Regularization weight relative to the largest ground-truth magnitude.
    #[arg(long = "lambda-rel")]
    pub lambda_rel: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Extrapolation weights, comma separated for sweeps.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long = "eps-fixed")]
    pub eps_fixed: Option<f64>,
    /// eirnri, irnri or pirnn; comma separated for comparisons.
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<Variant>,
    #[arg(long)]
    pub opttol: Option<f64>,
    #[arg(long)]
    pub klopt: Option<f64>,
    #[arg(long)]
    pub itmax: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mask: Option<MaskKind>,
    /// Hidden rectangles as row:col:height:width, comma separated.
    #[arg(long = "block-rects", value_delimiter = ',')]
    pub block_rects: Vec<Rect>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Ground-truth ranks, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub rank: Vec<usize>,
    /// Sampling ratios, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sr: Vec<f64>,
    /// Number of seeded instances per grid cell.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ImageArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// 8-bit grayscale or RGB PNG.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Rank of the target image.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub sr: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Instance snapshot to solve instead of generating one.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Write the solved instance as a snapshot.
    #[arg(long = "save-instance")]
    pub save_instance: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub sr: Option<f64>,
}

/// Every value a subcommand may use, echoed into its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    pub ranks: Vec<usize>,
    pub srs: Vec<f64>,
    pub lambda: Option<f64>,
    pub lambda_rel: Option<f64>,
    pub p: f64,
    pub beta: f64,
    pub mu: f64,
    pub alphas: Vec<f64>,
    pub eps0: f64,
    pub eps_fixed: f64,
    pub variants: Vec<Variant>,
    pub opttol: f64,
    pub klopt: f64,
    pub itmax: usize,
    pub seed: u64,
    pub seeds: usize,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub mask: MaskKind,
    pub block_rects: Vec<Rect>,
    pub input: Option<PathBuf>,
    pub instance: Option<PathBuf>,
    pub save_instance: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn synth_defaults() -> Self {
        let s = SolverConfig::default();
        Self {
            m: 150,
            n: 150,
            ranks: vec![5],
            srs: vec![0.5],
            lambda: None,
            lambda_rel: Some(0.1),
            p: 0.5,
            beta: s.beta,
            mu: s.mu,
            alphas: vec![s.alpha],
            eps0: s.eps0,
            eps_fixed: 1e-3,
            variants: vec![Variant::Eirnri],
            opttol: s.opttol,
            klopt: s.klopt,
            itmax: s.itmax,
            seed: 0,
            seeds: 50,
            workers: 0,
            out_dir: PathBuf::from("out/synth"),
            mask: MaskKind::Random,
            block_rects: Vec::new(),
            input: None,
            instance: None,
            save_instance: None,
        }
    }

    pub fn image_defaults() -> Self {
        Self {
            m: 0,
            n: 0,
            ranks: vec![30],
            srs: vec![0.8],
            lambda: Some(0.5),
            lambda_rel: None,
            eps_fixed: 1e-4,
            klopt: 1e-5,
            seeds: 1,
            out_dir: PathBuf::from("out/image"),
            ..Self::synth_defaults()
        }
    }

    pub fn trace_defaults() -> Self {
        Self {
            m: 15,
            n: 15,
            ranks: vec![3],
            srs: vec![0.5],
            lambda: Some(0.1),
            lambda_rel: None,
            // The 15 x 15 demo typically needs 1500 to 5000 iterations to settle.
            itmax: 5000,
            seeds: 1,
            out_dir: PathBuf::from("out/trace"),
            ..Self::synth_defaults()
        }
    }

    /// Overlays a JSON object on `self`. Setting one lambda rule clears the other.
    pub fn overlay_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.overlay(patch)
    }

    pub fn overlay(self, patch: Value) -> Result<Self> {
        let Value::Object(patch) = patch else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let mut base = serde_json::to_value(&self).map_err(|e| Error::Config(e.to_string()))?;
        let obj = base.as_object_mut().expect("config serializes to an object");
        if patch.contains_key("lambda") && !patch.contains_key("lambda_rel") {
            obj.insert("lambda_rel".into(), Value::Null);
        }
        if patch.contains_key("lambda_rel") && !patch.contains_key("lambda") {
            obj.insert("lambda".into(), Value::Null);
        }
        for (k, v) in patch {
            obj.insert(k, v);
        }
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    fn apply_common(&mut self, f: &CommonFlags) {
        if let Some(v) = f.lambda {
            self.lambda = Some(v);
            self.lambda_rel = None;
        }
        if let Some(v) = f.lambda_rel {
            self.lambda_rel = Some(v);
            self.lambda = None;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = f.$field.clone() { self.$field = v; })*
            };
        }
        set!(p, beta, mu, eps0, eps_fixed, opttol, klopt, itmax, seed, workers, out_dir, mask);
        if !f.alpha.is_empty() {
            self.alphas = f.alpha.clone();
        }
        if !f.variant.is_empty() {
            self.variants = f.variant.clone();
        }
        if !f.block_rects.is_empty() {
            self.block_rects = f.block_rects.clone();
        }
    }

    fn base(defaults: Self, common: &CommonFlags) -> Result<Self> {
        match &common.config {
            Some(path) => defaults.overlay_file(path),
            None => Ok(defaults),
        }
    }

    pub fn from_synth(args: &SynthArgs) -> Result<Self> {
        let mut c = Self::base(Self::synth_defaults(), &args.common)?;
        c.apply_common(&args.common);
        if let Some(v) = args.m {
            c.m = v;
        }
        if let Some(v) = args.n {
            c.n = v;
        }
        if !args.rank.is_empty() {
            c.ranks = args.rank.clone();
        }
        if !args.sr.is_empty() {
            c.srs = args.sr.clone();
        }
        if let Some(v) = args.seeds {
            c.seeds = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_image(args: &ImageArgs) -> Result<Self> {
        let mut c = Self::base(Self::image_defaults(), &args.common)?;
        c.apply_common(&args.common);
        if let Some(v) = &args.input {
            c.input = Some(v.clone());
        }
        if let Some(v) = args.rank {
            c.ranks = vec![v];
        }
        if let Some(v) = args.sr {
            c.srs = vec![v];
        }
        if c.input.is_none() {
            return Err(Error::Config("image requires --input".into()));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_trace(args: &TraceArgs) -> Result<Self> {
        let mut c = Self::base(Self::trace_defaults(), &args.common)?;
        c.apply_common(&args.common);
        macro_rules! opt {
            ($($field:ident),*) => {
                $(if let Some(v) = &args.$field { c.$field = Some(v.clone()); })*
            };
        }
        opt!(instance, save_instance);
        if let Some(v) = args.m {
            c.m = v;
        }
        if let Some(v) = args.n {
            c.n = v;
        }
        if let Some(v) = args.rank {
            c.ranks = vec![v];
        }
        if let Some(v) = args.sr {
            c.srs = vec![v];
        }
        c.validate()?;
        Ok(c)
    }

    /// Checks everything that can be checked before any solve.
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_some() == self.lambda_rel.is_some() {
            return Err(Error::Config("exactly one of lambda and lambda_rel must be set".into()));
        }
        if let Some(l) = self.lambda.or(self.lambda_rel) {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("regularization weight must be positive, got {l}")));
            }
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if self.ranks.is_empty() || self.srs.is_empty() || self.alphas.is_empty() || self.variants.is_empty() {
            return Err(Error::Config("rank, sr, alpha and variant lists must be non-empty".into()));
        }
        if let Some(&sr) = self.srs.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::Config(format!("sampling ratio {sr} outside (0, 1]")));
        }
        if self.ranks.contains(&0) {
            return Err(Error::Config("ranks must be positive".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be positive".into()));
        }
        for &variant in &self.variants {
            for &alpha in &self.alphas {
                // Completion losses are 1-smooth.
                self.solver_config(variant, alpha, 0).validate(1.0)?;
            }
        }
        Ok(())
    }

    pub fn solver_config(&self, variant: Variant, alpha: f64, seed: u64) -> SolverConfig {
        SolverConfig {
            beta: self.beta,
            mu: self.mu,
            alpha,
            eps0: self.eps0,
            eps_fixed: self.eps_fixed,
            opttol: self.opttol,
            klopt: self.klopt,
            itmax: self.itmax,
            variant,
            convex_loss: true,
            seed,
            trace_every: 1,
            record_eps: false,
        }
    }

    /// The extrapolation weights a variant actually runs with.
    pub fn alphas_for(&self, variant: Variant) -> Vec<f64> {
        match variant {
            Variant::Eirnri => self.alphas.clone(),
            _ => vec![0.0],
        }
    }

    pub fn mask_spec(&self, sr: f64, seed: u64) -> MaskSpec {
        match self.mask {
            MaskKind::Random => MaskSpec::RandomUniform {
                sampling_ratio: sr,
                seed,
            },
            MaskKind::Block => MaskSpec::Block {
                rects: self.block_rects.clone(),
            },
        }
    }

    pub fn lambda_for(&self, max_abs_truth: f64) -> f64 {
        match (self.lambda, self.lambda_rel) {
            (Some(l), _) => l,
            (None, Some(rel)) => rel * max_abs_truth,
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}
