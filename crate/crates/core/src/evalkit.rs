//! Evaluation toolkit: keypoint regression (%-MSE, PCK), pulse spectrogram
//! analysis, and the wind-speed power-law fit.

use nalgebra::DMatrix;
use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tracks::KeypointTracks;

/// Linear map from discovered to annotated coordinates, no intercept.
#[derive(Debug, Clone)]
pub struct RegressionResult {
    /// (2K, 2M) weight matrix.
    pub weights: DMatrix<f64>,
    /// Mean Euclidean train error, normalized by image side, times 100.
    pub train_error_pct: f64,
    /// Set when the design was rank-deficient and a ridge solve was used.
    pub regularized: bool,
}

impl RegressionResult {
    /// Map discovered coordinates (N, 2K) to annotated space (N, 2M).
    pub fn predict(&self, discovered: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, d) = discovered.dim();
        if d != self.weights.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "discovered dim {d} vs weights {}",
                self.weights.nrows()
            )));
        }
        let x = DMatrix::from_fn(n, d, |i, j| discovered[(i, j)]);
        let y = x * &self.weights;
        Ok(Array2::from_shape_fn((n, self.weights.ncols()), |(i, j)| {
            y[(i, j)]
        }))
    }
}

/// Mean Euclidean distance between corresponding (u, v) pairs, normalized by
/// the image side, expressed in percent.
pub fn percent_mse(predicted: &Array2<f64>, annotated: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != annotated.dim() || predicted.dim().1 % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "predicted {:?} vs annotated {:?}",
            predicted.dim(),
            annotated.dim()
        )));
    }
    let (n, d) = predicted.dim();
    let m = d / 2;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let du = predicted[(i, 2 * j)] - annotated[(i, 2 * j)];
            let dv = predicted[(i, 2 * j + 1)] - annotated[(i, 2 * j + 1)];
            total += (du * du + dv * dv).sqrt();
        }
    }
    Ok(100.0 * total / (n * m) as f64)
}

/// Least-squares linear regressor without a bias term from discovered
/// coordinates (N, 2K) to annotated coordinates (N, 2M), both normalized by
/// image size. Rank-deficient designs fall back to a ridge solve and set the
/// `regularized` flag.
pub fn fit_keypoint_regression(
    discovered: &Array2<f64>,
    annotated: &Array2<f64>,
) -> Result<RegressionResult> {
    let (n, d) = discovered.dim();
    let (an, m2) = annotated.dim();
    if n != an {
        return Err(Error::ShapeMismatch(format!(
            "{n} discovered rows vs {an} annotated rows"
        )));
    }
    if n == 0 || d == 0 || m2 == 0 || m2 % 2 != 0 {
        return Err(Error::InvalidArgument("empty regression problem".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| discovered[(i, j)]);
    let y = DMatrix::from_fn(n, m2, |i, j| annotated[(i, j)]);

    let svd = x.clone().svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    let rank = svd.rank(eps);
    let (weights, regularized) = if rank < d.min(n) {
        // Ridge: (X^T X + lambda I)^-1 X^T Y.
        let lambda = 1e-8;
        let xtx = x.transpose() * &x + DMatrix::identity(d, d) * lambda;
        let xty = x.transpose() * &y;
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("ridge solve failed".into()))?;
        (chol.solve(&xty), true)
    } else {
        (
            svd.solve(&y, eps)
                .map_err(|e| Error::InvalidArgument(format!("svd solve failed: {e}")))?,
            false,
        )
    };

    let fitted = &x * &weights;
    let fitted_nd = Array2::from_shape_fn((n, m2), |(i, j)| fitted[(i, j)]);
    let train_error_pct = percent_mse(&fitted_nd, annotated)?;
    Ok(RegressionResult {
        weights,
        train_error_pct,
        regularized,
    })
}

/// Fraction of predictions within `threshold` of the annotation (inclusive
/// boundary). Coordinates and threshold share units.
pub fn pck(predicted: &[(f64, f64)], annotated: &[(f64, f64)], threshold: f64) -> Result<f64> {
    if predicted.len() != annotated.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} annotations",
            predicted.len(),
            annotated.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("empty pck input".into()));
    }
    let within = predicted
        .iter()
        .zip(annotated)
        .filter(|(p, a)| {
            let d = ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
            d <= threshold
        })
        .count();
    Ok(within as f64 / predicted.len() as f64)
}

/// Mean pairwise keypoint distance per frame, optionally restricted to a
/// subset of keypoint ids (the high-confidence ones).
pub fn mean_pairwise_distance_series(
    tracks: &KeypointTracks,
    keypoints: Option<&[u32]>,
) -> Result<Vec<f64>> {
    tracks.check_continuous()?;
    let all: Vec<u32> = (0..tracks.n_keypoints() as u32).collect();
    let kps = keypoints.unwrap_or(&all);
    if kps.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 keypoints for a distance series".into(),
        ));
    }
    let mut series = Vec::with_capacity(tracks.n_frames());
    for f in 0..tracks.n_frames() as u64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, &a) in kps.iter().enumerate() {
            for &b in &kps[i + 1..] {
                let ra = tracks.get(f, a).ok_or(Error::MissingFrame {
                    frame: f as usize,
                    kp: a as usize,
                })?;
                let rb = tracks.get(f, b).ok_or(Error::MissingFrame {
                    frame: f as usize,
                    kp: b as usize,
                })?;
                total += ((ra.u - rb.u).powi(2) + (ra.v - rb.v).powi(2)).sqrt();
                count += 1;
            }
        }
        series.push(total / count as f64);
    }
    Ok(series)
}

#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// Frequency of each bin, Hz.
    pub freqs: Vec<f64>,
    /// Start time of each window, seconds.
    pub times: Vec<f64>,
    /// (n_windows, n_bins) magnitudes.
    pub magnitude: Array2<f64>,
    /// Dominant non-DC bin per window; `None` when the spectrum is flat
    /// below the noise floor.
    pub dominant: Vec<Option<usize>>,
}

impl Spectrogram {
    /// Most common dominant frequency across windows, when any window has a
    /// dominant band at all.
    pub fn dominant_frequency(&self) -> Option<f64> {
        let mut counts = std::collections::HashMap::new();
        for bin in self.dominant.iter().flatten() {
            *counts.entry(*bin).or_insert(0usize) += 1;
        }
        counts
            .into_iter()
            .max_by_key(|&(bin, count)| (count, std::cmp::Reverse(bin)))
            .map(|(bin, _)| self.freqs[bin])
    }
}

/// Short-time spectral magnitude of a scalar series with per-window mean
/// removal. `overlap` is the fractional window overlap in [0, 1).
pub fn pulse_spectrogram(
    series: &[f64],
    fps: f64,
    window_s: f64,
    overlap: f64,
) -> Result<Spectrogram> {
    if fps <= 0.0 || window_s <= 0.0 {
        return Err(Error::InvalidArgument("fps and window must be positive".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument("overlap must be in [0, 1)".into()));
    }
    let n = (window_s * fps).round() as usize;
    if n < 2 || series.len() < n {
        return Err(Error::InvalidArgument(format!(
            "series of {} samples is shorter than one {n}-sample window",
            series.len()
        )));
    }
    let hop = ((n as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let n_bins = n / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);

    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut dominant = Vec::new();
    let noise_floor = 1e-9 * n as f64;
    let mut start = 0usize;
    while start + n <= series.len() {
        let window = &series[start..start + n];
        let mean = window.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> = window
            .iter()
            .map(|&v| Complex::new(v - mean, 0.0))
            .collect();
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm()).collect();
        let peak = mags[1..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite magnitude"))
            .map(|(i, &m)| (i + 1, m));
        dominant.push(peak.filter(|&(_, m)| m > noise_floor).map(|(i, _)| i));
        rows.push(mags);
        times.push(start as f64 / fps);
        start += hop;
    }
    let magnitude = Array2::from_shape_fn((rows.len(), n_bins), |(i, j)| rows[i][j]);
    let freqs = (0..n_bins).map(|i| i as f64 * fps / n as f64).collect();
    Ok(Spectrogram {
        freqs,
        times,
        magnitude,
        dominant,
    })
}

/// One clip of the wind data: sway-amplitude equivalent and mean wind speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindSample {
    pub phi_bar: f64,
    pub u_bar: f64,
    /// Turbulence intensity; stored for reporting, unused in the fit.
    pub i_u: Option<f64>,
}

/// Least-squares fit of `u_bar ~ c0 * phi_bar^exponent` through the origin;
/// returns `(c0, r_squared)`.
pub fn fit_wind_model(samples: &[WindSample], exponent: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 wind samples".into()));
    }
    if samples.iter().any(|s| s.phi_bar < 0.0 || s.u_bar < 0.0) {
        return Err(Error::InvalidArgument(
            "wind samples must be non-negative".into(),
        ));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.phi_bar.powf(exponent)).collect();
    let sum_x2: f64 = xs.iter().map(|x| x * x).sum();
    if sum_x2 <= 0.0 {
        return Err(Error::InvalidArgument(
            "all sway amplitudes are zero; nothing to fit".into(),
        ));
    }
    let sum_xu: f64 = xs
        .iter()
        .zip(samples)
        .map(|(x, s)| x * s.u_bar)
        .sum();
    let c0 = sum_xu / sum_x2;
    let mean_u = samples.iter().map(|s| s.u_bar).sum::<f64>() / samples.len() as f64;
    let ss_res: f64 = xs
        .iter()
        .zip(samples)
        .map(|(x, s)| (s.u_bar - c0 * x).powi(2))
        .sum();
    let ss_tot: f64 = samples.iter().map(|s| (s.u_bar - mean_u).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok((c0, r2))
}

/// Convex hull area of a point set (monotone chain + shoelace); fewer than
/// 3 distinct points give 0.
pub fn convex_hull_area(points: &[(f64, f64)]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let half = |iter: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut chain: Vec<(f64, f64)> = Vec::new();
        for p in iter {
            while chain.len() >= 2 && cross(chain[chain.len() - 2], chain[chain.len() - 1], p) <= 0.0
            {
                chain.pop();
            }
            chain.push(p);
        }
        chain.pop();
        chain
    };
    let lower = half(&mut pts.iter().copied());
    let upper = half(&mut pts.iter().rev().copied());
    let hull: Vec<(f64, f64)> = lower.into_iter().chain(upper).collect();
    if hull.len() < 3 {
        return 0.0;
    }
    let mut area = 0.0;
    for i in 0..hull.len() {
        let (x1, y1) = hull[i];
        let (x2, y2) = hull[(i + 1) % hull.len()];
        area += x1 * y2 - x2 * y1;
    }
    area.abs() / 2.0
}

/// Per-frame convex hull area of the tracked keypoints.
pub fn hull_area_series(tracks: &KeypointTracks) -> Result<Vec<f64>> {
    tracks.check_continuous()?;
    let k = tracks.n_keypoints() as u32;
    Ok((0..tracks.n_frames() as u64)
        .map(|f| {
            let pts: Vec<(f64, f64)> = (0..k)
                .map(|kp| {
                    let r = tracks.get(f, kp).expect("continuity checked");
                    (r.u, r.v)
                })
                .collect();
            convex_hull_area(&pts)
        })
        .collect())
}

/// Sway-amplitude equivalent of a clip: population std of the hull areas.
pub fn sway_amplitude(areas: &[f64]) -> Result<f64> {
    if areas.is_empty() {
        return Err(Error::InvalidArgument("empty clip".into()));
    }
    let mean = areas.iter().sum::<f64>() / areas.len() as f64;
    let var = areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / areas.len() as f64;
    Ok(var.sqrt())
}
