//! Synthetic instances, sampling masks, image targets and file formats.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemInstance};
use crate::svd::svd_ordered;

/// `B C` with `B` (`m x r`) then `C` (`r x n`) filled column by column with
/// standard normals from a ChaCha8 stream seeded by `seed`.
pub fn gen_lowrank(m: usize, n: usize, r: usize, seed: u64) -> Result<Matrix> {
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidArgument(format!("rank {r} outside [1, {}]", m.min(n))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = Matrix::from_fn(m, r, |_, _| StandardNormal.sample(&mut rng));
    let c = Matrix::from_fn(r, n, |_, _| StandardNormal.sample(&mut rng));
    Ok(b * c)
}

/// Axis-aligned block of unobserved entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    /// Centered square holding about `fraction` of an `m x n` grid.
    pub fn centered_square(m: usize, n: usize, fraction: f64) -> Rect {
        let side = ((fraction * (m * n) as f64).sqrt().round() as usize).min(m).min(n);
        Rect {
            row: (m - side) / 2,
            col: (n - side) / 2,
            height: side,
            width: side,
        }
    }

    fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.row && i < self.row + self.height && j >= self.col && j < self.col + self.width
    }
}

impl std::str::FromStr for Rect {
    type Err = Error;

    /// `row:col:height:width`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("rectangle '{s}' is not row:col:height:width"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let v: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Ok(Rect {
            row: v[0],
            col: v[1],
            height: v[2],
            width: v[3],
        })
    }
}

/// Share of pixels hidden by the default block mask.
pub const DEFAULT_BLOCK_FRACTION: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    RandomUniform { sampling_ratio: f64, seed: u64 },
    /// Observed entries are everything outside the rectangles. An empty list
    /// selects the default centered square.
    Block { rects: Vec<Rect> },
}

/// Observed index pairs, sorted row-major.
pub fn gen_mask(m: usize, n: usize, spec: &MaskSpec) -> Result<Vec<(usize, usize)>> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("mask of an empty grid".into()));
    }
    match spec {
        MaskSpec::RandomUniform { sampling_ratio, seed } => {
            let sr = *sampling_ratio;
            if !(sr > 0.0 && sr <= 1.0) {
                return Err(Error::InvalidArgument(format!("sampling ratio {sr} outside (0, 1]")));
            }
            let total = m * n;
            let count = ((sr * total as f64).ceil() as usize).min(total);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut idx = rand::seq::index::sample(&mut rng, total, count).into_vec();
            idx.sort_unstable();
            Ok(idx.into_iter().map(|k| (k / n, k % n)).collect())
        }
        MaskSpec::Block { rects } => {
            let default = [Rect::centered_square(m, n, DEFAULT_BLOCK_FRACTION)];
            let rects: &[Rect] = if rects.is_empty() { &default } else { rects };
            for r in rects {
                if r.row + r.height > m || r.col + r.width > n {
                    return Err(Error::InvalidArgument(format!("rectangle {r:?} exceeds {m}x{n}")));
                }
            }
            Ok((0..m)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| !rects.iter().any(|r| r.contains(i, j)))
                .collect())
        }
    }
}

/// `a` with unobserved entries set to zero.
pub fn apply_mask(a: &Matrix, mask: &[(usize, usize)]) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols());
    for &(i, j) in mask {
        out[(i, j)] = a[(i, j)];
    }
    out
}

/// Best rank-`r` approximation and the Frobenius norm of what was dropped.
pub fn truncate_rank(a: &Matrix, r: usize) -> Result<(Matrix, f64)> {
    if r == 0 || r > a.nrows().min(a.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside [1, {}]",
            a.nrows().min(a.ncols())
        )));
    }
    let svd = svd_ordered(a)?;
    let tail = svd.s[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let kept: Vec<f64> = svd.s.iter().enumerate().map(|(i, &s)| if i < r { s } else { 0.0 }).collect();
    Ok((svd.compose(&kept), tail))
}

/// Per-channel real matrices on the `[0, 255]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: Vec<Matrix>,
}

impl ImageTensor {
    pub fn new(channels: Vec<Matrix>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::InvalidArgument("image without channels".into()));
        };
        let shape = first.shape();
        if let Some(c) = channels.iter().find(|c| c.shape() != shape) {
            return Err(Error::dims("image channel", shape, c.shape()));
        }
        Ok(Self { channels })
    }

    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    pub fn map_channels<F: FnMut(&Matrix) -> Matrix>(&self, f: F) -> ImageTensor {
        ImageTensor {
            channels: self.channels.iter().map(f).collect(),
        }
    }

    pub fn clamped(&self) -> ImageTensor {
        self.map_channels(|c| c.map(|v| v.clamp(0.0, 255.0)))
    }
}

/// Per-channel rank-`r` truncation, clamped to `[0, 255]`.
pub fn image_to_lowrank_target(image: &ImageTensor, r: usize) -> Result<ImageTensor> {
    let channels = image
        .channels
        .iter()
        .map(|c| truncate_rank(c, r).map(|(t, _)| t.map(|v| v.clamp(0.0, 255.0))))
        .collect::<Result<Vec<_>>>()?;
    ImageTensor::new(channels)
}

#[cfg(feature = "png")]
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    use image::DynamicImage;

    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            ImageTensor::new(vec![Matrix::from_fn(h, w, |i, j| buf.get_pixel(j as u32, i as u32)[0] as f64)])
        }
        DynamicImage::ImageRgb8(buf) => ImageTensor::new(
            (0..3)
                .map(|c| Matrix::from_fn(h, w, |i, j| buf.get_pixel(j as u32, i as u32)[c] as f64))
                .collect(),
        ),
        other => Err(Error::Format(format!(
            "{}: unsupported pixel format {:?} (expected 8-bit grayscale or RGB)",
            path.display(),
            other.color()
        ))),
    }
}

/// Rounds to the nearest integer and clamps to `[0, 255]`.
#[cfg(feature = "png")]
pub fn save_image(path: &Path, image: &ImageTensor) -> Result<()> {
    let (h, w) = image.shape();
    let px = |c: usize, i: usize, j: usize| image.channels[c][(i, j)].round().clamp(0.0, 255.0) as u8;
    let result = match image.channels.len() {
        1 => image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([px(0, y as usize, x as usize)]))
            .save_with_format(path, image::ImageFormat::Png),
        3 => image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (i, j) = (y as usize, x as usize);
            image::Rgb([px(0, i, j), px(1, i, j), px(2, i, j)])
        })
        .save_with_format(path, image::ImageFormat::Png),
        c => {
            return Err(Error::InvalidArgument(format!("cannot save an image with {c} channels")));
        }
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Self-describing text container for a completion instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSnapshot {
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub p: f64,
    /// Observed positions, row-major order.
    pub mask: Vec<(usize, usize)>,
    /// Observed values aligned with `mask`.
    pub values: Vec<f64>,
    /// Ground truth, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<f64>>,
}

fn row_major(a: &Matrix) -> Vec<f64> {
    a.transpose().as_slice().to_vec()
}

impl InstanceSnapshot {
    pub fn capture(instance: &ProblemInstance, ground_truth: Option<&Matrix>) -> Result<Self> {
        let (rows, cols) = instance.user_shape();
        let observed = instance.to_user(instance.observed());
        let mut mask: Vec<(usize, usize)> = instance
            .mask()
            .iter()
            .map(|&(i, j)| if instance.transposed() { (j, i) } else { (i, j) })
            .collect();
        mask.sort_unstable();
        let values = mask.iter().map(|&ij| observed[ij]).collect();
        if let Some(g) = ground_truth {
            if g.shape() != (rows, cols) {
                return Err(Error::dims("ground truth", (rows, cols), g.shape()));
            }
        }
        Ok(Self {
            rows,
            cols,
            lambda: instance.lambda(),
            p: instance.p(),
            mask,
            values,
            ground_truth: ground_truth.map(row_major),
        })
    }

    pub fn instance(&self) -> Result<ProblemInstance> {
        if self.values.len() != self.mask.len() {
            return Err(Error::Format(format!(
                "{} values for {} observed positions",
                self.values.len(),
                self.mask.len()
            )));
        }
        let mut observed = Matrix::zeros(self.rows, self.cols);
        for (&(i, j), &v) in self.mask.iter().zip(&self.values) {
            if i >= self.rows || j >= self.cols {
                return Err(Error::Format(format!("position ({i}, {j}) outside {}x{}", self.rows, self.cols)));
            }
            observed[(i, j)] = v;
        }
        ProblemInstance::new(observed, self.mask.clone(), self.lambda, self.p)
    }

    pub fn ground_truth(&self) -> Result<Option<Matrix>> {
        match &self.ground_truth {
            None => Ok(None),
            Some(v) if v.len() == self.rows * self.cols => Ok(Some(Matrix::from_row_slice(self.rows, self.cols, v))),
            Some(v) => Err(Error::Format(format!(
                "ground truth has {} entries, expected {}",
                v.len(),
                self.rows * self.cols
            ))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::{rank_of, RankMode};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn lowrank_rank_one_rows_are_proportional() {
        let a = gen_lowrank(5, 7, 1, 3).unwrap();
        for i in 1..5 {
            let ratio = a[(i, 0)] / a[(0, 0)];
            for j in 0..7 {
                assert!((a[(i, j)] - ratio * a[(0, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lowrank_has_exact_rank_and_is_deterministic() {
        let a = gen_lowrank(150, 150, 5, 42).unwrap();
        let s = svd_ordered(&a).unwrap().s;
        assert_eq!(rank_of(&s, RankMode::Relative), 5);
        assert!(s[5] / s[0] < 1e-10);
        assert_eq!(a, gen_lowrank(150, 150, 5, 42).unwrap());
        assert_ne!(a, gen_lowrank(150, 150, 5, 43).unwrap());
        assert!(gen_lowrank(4, 4, 0, 1).is_err());
        assert!(gen_lowrank(4, 4, 5, 1).is_err());
    }

    #[test]
    fn lowrank_entry_moments() {
        let a = gen_lowrank(150, 150, 5, 7).unwrap();
        let n = a.len() as f64;
        let mean = a.sum() / n;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.2, "{mean}");
        assert!((var - 5.0).abs() < 1.0, "{var}");
    }

    #[test]
    fn random_mask_cardinality() {
        let full = gen_mask(4, 6, &MaskSpec::RandomUniform { sampling_ratio: 1.0, seed: 0 }).unwrap();
        assert_eq!(full.len(), 24);
        let spec = MaskSpec::RandomUniform {
            sampling_ratio: 0.5,
            seed: 9,
        };
        let half = gen_mask(150, 150, &spec).unwrap();
        assert_eq!(half.len(), 11250);
        assert!(half.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(half, gen_mask(150, 150, &spec).unwrap());
        let odd = gen_mask(3, 3, &MaskSpec::RandomUniform { sampling_ratio: 0.5, seed: 1 }).unwrap();
        assert_eq!(odd.len(), 5);
        for sr in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(gen_mask(3, 3, &MaskSpec::RandomUniform { sampling_ratio: sr, seed: 1 }).is_err());
        }
    }

    #[test]
    fn block_mask_is_complement() {
        let rects = vec![
            Rect {
                row: 1,
                col: 1,
                height: 2,
                width: 3,
            },
            Rect {
                row: 2,
                col: 3,
                height: 2,
                width: 2,
            },
        ];
        let mask = gen_mask(5, 6, &MaskSpec::Block { rects }).unwrap();
        // 6 + 4 hidden with 1 overlap at (2, 3).
        assert_eq!(mask.len(), 30 - 9);
        assert!(!mask.contains(&(2, 3)));
        assert!(mask.contains(&(0, 0)));
        let out = Rect {
            row: 4,
            col: 0,
            height: 2,
            width: 1,
        };
        assert!(gen_mask(5, 6, &MaskSpec::Block { rects: vec![out] }).is_err());
    }

    #[test]
    fn default_block_covers_about_six_percent() {
        let mask = gen_mask(300, 300, &MaskSpec::Block { rects: vec![] }).unwrap();
        let hidden = 90000 - mask.len();
        assert_eq!(hidden, 73 * 73);
        assert!(!mask.contains(&(150, 150)));
        assert_eq!("3:4:5:6".parse::<Rect>().unwrap(), Rect { row: 3, col: 4, height: 5, width: 6 });
        assert!("3:4:5".parse::<Rect>().is_err());
    }

    #[test]
    fn truncation_matches_eckart_young_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix::from_fn(12, 9, |_, _| rng.random_range(0.0..255.0));
        let s = svd_ordered(&a).unwrap().s;
        for r in [1, 3, 9] {
            let (t, tail) = truncate_rank(&a, r).unwrap();
            let oracle = s[r..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(((&a - &t).norm() - oracle).abs() < 1e-8);
            assert!((tail - oracle).abs() < 1e-10);
            assert_eq!(rank_of(&svd_ordered(&t).unwrap().s, RankMode::Relative), r);
        }
        assert!(truncate_rank(&a, 10).is_err());
    }

    #[test]
    fn full_rank_target_is_identity_up_to_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = ImageTensor::new(
            (0..3)
                .map(|_| Matrix::from_fn(6, 8, |_, _| rng.random_range(0..=255u32) as f64))
                .collect(),
        )
        .unwrap();
        let t = image_to_lowrank_target(&img, 6).unwrap();
        for (a, b) in t.channels.iter().zip(&img.channels) {
            assert!((a - b).amax() < 1e-9);
        }
        assert!(image_to_lowrank_target(&img, 0).is_err());
    }

    proptest! {
        #[test]
        fn truncation_beats_random_competitors(seed in 0u64..1000, r in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::from_fn(6, 5, |_, _| rng.random_range(-3.0..3.0));
            let (t, _) = truncate_rank(&a, r).unwrap();
            let b = Matrix::from_fn(6, r, |_, _| rng.random_range(-3.0..3.0));
            let c = Matrix::from_fn(r, 5, |_, _| rng.random_range(-3.0..3.0));
            let rival = b * c;
            prop_assert!((&a - &t).norm() <= (&a - rival).norm() + 1e-12);
        }
    }

    #[cfg(feature = "png")]
    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let grad = ImageTensor::new(vec![Matrix::from_fn(8, 8, |i, j| (i * 32 + j * 3) as f64)]).unwrap();
        let path = dir.path().join("g.png");
        save_image(&path, &grad).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels.len(), 1);
        assert_eq!(back, grad);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rgb = ImageTensor::new(
            (0..3)
                .map(|_| Matrix::from_fn(5, 7, |_, _| rng.random_range(-10.0..265.0)))
                .collect(),
        )
        .unwrap();
        let path = dir.path().join("c.png");
        save_image(&path, &rgb).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels.len(), 3);
        assert_eq!(back.shape(), (5, 7));
        for (a, b) in back.channels.iter().zip(&rgb.clamped().channels) {
            assert!((a - b).amax() <= 0.5);
        }
        assert!(matches!(load_image(&dir.path().join("missing.png")), Err(Error::Io(_))));
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let xs = gen_lowrank(7, 5, 2, 3).unwrap() * (1.0 / 3.0);
        let mask = gen_mask(7, 5, &MaskSpec::RandomUniform { sampling_ratio: 0.6, seed: 2 }).unwrap();
        let inst = ProblemInstance::from_samples(&xs, mask, 0.1 * xs.amax(), 0.5).unwrap();
        let snap = InstanceSnapshot::capture(&inst, Some(&xs)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        snap.write(&path).unwrap();
        let back = InstanceSnapshot::read(&path).unwrap();
        assert_eq!(back, snap);
        let inst2 = back.instance().unwrap();
        assert_eq!(inst2.observed(), inst.observed());
        assert_eq!(inst2.mask(), inst.mask());
        assert_eq!(inst2.lambda(), inst.lambda());
        assert_eq!(back.ground_truth().unwrap().unwrap(), xs);
    }
}
