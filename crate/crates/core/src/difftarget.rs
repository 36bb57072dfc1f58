//! Spatiotemporal difference targets: what the decoder learns to reconstruct.
//!
//! Three difference kinds plus the plain-image baseline. All maps are stored
//! H x W x 3 in [0, 1]; the raw difference is affinely encoded via
//! `(d + 1) / 2` so every target fits the image-range input of the
//! perceptual feature extractor.

use ndarray::{Array2, Array3};

use crate::config::{TargetConfig, TargetKind};
use crate::data::FramePair;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DifferenceTarget {
    pub map: Array3<f32>,
    pub kind: TargetKind,
    pub value_range: (f32, f32),
}

impl DifferenceTarget {
    fn new(map: Array3<f32>, kind: TargetKind) -> Self {
        debug_assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            map,
            kind,
            value_range: (0.0, 1.0),
        }
    }
}

/// Dispatch on the configured target kind.
pub fn compute_target(pair: &FramePair, cfg: &TargetConfig) -> Result<DifferenceTarget> {
    match cfg.kind {
        TargetKind::Ssim => ssim_dissimilarity(pair, cfg.ssim.window, cfg.ssim.c1, cfg.ssim.c2),
        TargetKind::AbsDiff => abs_difference(pair),
        TargetKind::RawDiff => raw_difference(pair),
        TargetKind::Image => Ok(image_target(pair)),
    }
}

/// Per-pixel local SSIM between the two frames of a pair, negated and
/// rescaled to a dissimilarity in [0, 1] via `(1 - ssim) / 2`.
///
/// Each pixel's statistics are uniform averages over the `window` x `window`
/// patch centered there, truncated at the frame border; population (1/n)
/// normalization is used for variances. Computed per channel.
pub fn ssim_dissimilarity(
    pair: &FramePair,
    window: usize,
    c1: f64,
    c2: f64,
) -> Result<DifferenceTarget> {
    let (h, w, channels) = pair.reference.pixels().dim();
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "ssim window must be odd and >= 3, got {window}"
        )));
    }
    if window > h || window > w {
        return Err(Error::InvalidArgument(format!(
            "ssim window {window} larger than frame {h}x{w}"
        )));
    }
    if c1 <= 0.0 || c2 <= 0.0 {
        return Err(Error::InvalidArgument(
            "ssim constants must be positive".into(),
        ));
    }
    let r = window / 2;
    let mut map = Array3::zeros((h, w, channels));
    for ch in 0..channels {
        let x = pair.reference.pixels().index_axis(ndarray::Axis(2), ch);
        let y = pair.future.pixels().index_axis(ndarray::Axis(2), ch);
        let ix = Integral::build(&x.to_owned(), |a| f64::from(a));
        let iy = Integral::build(&y.to_owned(), |a| f64::from(a));
        let ixx = Integral::build(&x.to_owned(), |a| f64::from(a) * f64::from(a));
        let iyy = Integral::build(&y.to_owned(), |a| f64::from(a) * f64::from(a));
        let ixy = Integral::build2(&x.to_owned(), &y.to_owned());
        for i in 0..h {
            let (r0, r1) = (i.saturating_sub(r), (i + r).min(h - 1));
            for j in 0..w {
                let (c0, c1b) = (j.saturating_sub(r), (j + r).min(w - 1));
                let n = ((r1 - r0 + 1) * (c1b - c0 + 1)) as f64;
                let sx = ix.sum(r0, c0, r1, c1b);
                let sy = iy.sum(r0, c0, r1, c1b);
                let mx = sx / n;
                let my = sy / n;
                let vx = ixx.sum(r0, c0, r1, c1b) / n - mx * mx;
                let vy = iyy.sum(r0, c0, r1, c1b) / n - my * my;
                let cov = ixy.sum(r0, c0, r1, c1b) / n - mx * my;
                let ssim = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                map[(i, j, ch)] = ((1.0 - ssim) / 2.0).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(DifferenceTarget::new(map, TargetKind::Ssim))
}

/// Elementwise `|future - reference|`.
pub fn abs_difference(pair: &FramePair) -> Result<DifferenceTarget> {
    let map = ndarray::Zip::from(pair.future.pixels())
        .and(pair.reference.pixels())
        .map_collect(|f, r| (f - r).abs());
    Ok(DifferenceTarget::new(map, TargetKind::AbsDiff))
}

/// Elementwise `future - reference`, stored shifted to [0, 1] via
/// `(d + 1) / 2`; the loss is invariant to this shared affine encoding.
pub fn raw_difference(pair: &FramePair) -> Result<DifferenceTarget> {
    let map = ndarray::Zip::from(pair.future.pixels())
        .and(pair.reference.pixels())
        .map_collect(|f, r| ((f - r) + 1.0) / 2.0);
    Ok(DifferenceTarget::new(map, TargetKind::RawDiff))
}

/// The future frame itself: the image-reconstruction ablation baseline.
pub fn image_target(pair: &FramePair) -> DifferenceTarget {
    DifferenceTarget::new(pair.future.pixels().clone(), TargetKind::Image)
}

/// Summed-area table with a half-open (exclusive) top-left padding row/col.
struct Integral {
    table: Array2<f64>,
}

impl Integral {
    fn build(src: &Array2<f32>, f: impl Fn(f32) -> f64) -> Self {
        let (h, w) = src.dim();
        let mut table = Array2::zeros((h + 1, w + 1));
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += f(src[(i, j)]);
                table[(i + 1, j + 1)] = table[(i, j + 1)] + row;
            }
        }
        Self { table }
    }

    fn build2(a: &Array2<f32>, b: &Array2<f32>) -> Self {
        let (h, w) = a.dim();
        let mut table = Array2::zeros((h + 1, w + 1));
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += f64::from(a[(i, j)]) * f64::from(b[(i, j)]);
                table[(i + 1, j + 1)] = table[(i, j + 1)] + row;
            }
        }
        Self { table }
    }

    /// Inclusive-rectangle sum over rows r0..=r1, cols c0..=c1.
    fn sum(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> f64 {
        self.table[(r1 + 1, c1 + 1)] - self.table[(r0, c1 + 1)] - self.table[(r1 + 1, c0)]
            + self.table[(r0, c0)]
    }
}
