//! Per-keypoint features from raw heatmaps: confidence, covariance triple,
//! and multi-peak extraction for visually identical agents.

use ndarray::Array2;

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::model::geometry::soft_argmax;
use crate::model::{ModelState, RunMode};
use crate::tensorutil::{frames_to_tensor, plane_to_array};
use crate::tracks::{KeypointTracks, TrackRecord};

const NORMALIZATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapFeatures {
    pub confidence: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub sigma2_xy: f64,
}

fn check_normalized(map: &Array2<f32>) -> Result<()> {
    let sum: f64 = map.iter().map(|&v| f64::from(v)).sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized(sum));
    }
    Ok(())
}

/// Maximum value of a normalized heatmap.
pub fn confidence(normalized: &Array2<f32>) -> Result<f64> {
    check_normalized(normalized)?;
    Ok(normalized
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v))))
}

/// Second moments of a normalized heatmap about the keypoint, in normalized
/// coordinate units squared.
pub fn covariance(normalized: &Array2<f32>, keypoint: (f64, f64)) -> Result<(f64, f64, f64)> {
    check_normalized(normalized)?;
    let (h, w) = normalized.dim();
    let (u, v) = keypoint;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for ((i, j), &m) in normalized.indexed_iter() {
        let m = f64::from(m);
        let dx = (j as f64 + 0.5) / w as f64 - u;
        let dy = (i as f64 + 0.5) / h as f64 - v;
        sx += dx * dx * m;
        sy += dy * dy * m;
        sxy += dx * dy * m;
    }
    Ok((sx, sy, sxy))
}

/// Confidence plus covariance triple for one normalized heatmap.
pub fn features(normalized: &Array2<f32>, keypoint: (f64, f64)) -> Result<HeatmapFeatures> {
    let confidence = confidence(normalized)?;
    let (sigma2_x, sigma2_y, sigma2_xy) = covariance(normalized, keypoint)?;
    Ok(HeatmapFeatures {
        confidence,
        sigma2_x,
        sigma2_y,
        sigma2_xy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakKeypoint {
    pub uv: (f64, f64),
    pub features: HeatmapFeatures,
    /// Set when fewer distinguishable peaks than agents were found and the
    /// global maximum was reused.
    pub duplicate: bool,
}

/// Greedy multi-peak extraction for `n_agents` visually identical agents in
/// one raw heatmap. Peaks are picked by value with a suppression square of
/// half-size `region`; the spatial softmax and features are computed within
/// each peak's window. Results are ordered by vertical coordinate (smaller
/// v first), which is the agent identity rule.
pub fn extract_multi_peak(
    raw: &Array2<f32>,
    n_agents: usize,
    region: usize,
) -> Result<Vec<PeakKeypoint>> {
    if n_agents == 0 {
        return Err(Error::InvalidArgument("n_agents must be at least 1".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("extract_multi_peak input".into()));
    }
    let (h, w) = raw.dim();
    if n_agents == 1 {
        // Degenerate case: exactly the global soft-argmax.
        let (norm, uv) = soft_argmax(raw)?;
        return Ok(vec![PeakKeypoint {
            uv,
            features: features(&norm, uv)?,
            duplicate: false,
        }]);
    }
    if region == 0 || 2 * region + 1 > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "suppression region {region} invalid for {h}x{w} map"
        )));
    }

    let mut working = raw.mapv(f64::from);
    let mut peak_cells: Vec<(usize, usize)> = Vec::new();
    let mut duplicates = 0usize;
    while peak_cells.len() + duplicates < n_agents {
        // Highest remaining cell that is a local maximum of the original map.
        let mut best: Option<((usize, usize), f64)> = None;
        for ((i, j), &v) in working.indexed_iter() {
            if v.is_finite() && best.is_none_or(|(_, bv)| v > bv) {
                best = Some(((i, j), v));
            }
        }
        let Some(((pi, pj), _)) = best else {
            duplicates = n_agents - peak_cells.len();
            break;
        };
        let is_local_max = (pi.saturating_sub(1)..=(pi + 1).min(h - 1)).all(|i| {
            (pj.saturating_sub(1)..=(pj + 1).min(w - 1))
                .all(|j| raw[(i, j)] <= raw[(pi, pj)])
        });
        let suppress = |working: &mut Array2<f64>, ci: usize, cj: usize, r: usize| {
            for i in ci.saturating_sub(r)..=(ci + r).min(h - 1) {
                for j in cj.saturating_sub(r)..=(cj + r).min(w - 1) {
                    working[(i, j)] = f64::NEG_INFINITY;
                }
            }
        };
        if is_local_max {
            peak_cells.push((pi, pj));
            suppress(&mut working, pi, pj, region);
        } else {
            // Shoulder of an already-suppressed peak; not a distinct agent.
            suppress(&mut working, pi, pj, 0);
        }
    }

    let mut out = Vec::with_capacity(n_agents);
    let global_max = raw
        .indexed_iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|((i, j), _)| (i, j))
        .expect("non-empty map");
    for (idx, &(pi, pj)) in peak_cells
        .iter()
        .chain(std::iter::repeat(&global_max).take(duplicates))
        .enumerate()
    {
        let duplicate = idx >= peak_cells.len();
        let (i0, i1) = (pi.saturating_sub(region), (pi + region).min(h - 1));
        let (j0, j1) = (pj.saturating_sub(region), (pj + region).min(w - 1));
        // Softmax over the window only, with coordinates kept global.
        let max = raw
            .slice(ndarray::s![i0..=i1, j0..=j1])
            .iter()
            .fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let mut local = Array2::<f64>::zeros((i1 - i0 + 1, j1 - j0 + 1));
        let mut total = 0.0;
        for i in i0..=i1 {
            for j in j0..=j1 {
                let e = (f64::from(raw[(i, j)]) - max).exp();
                local[(i - i0, j - j0)] = e;
                total += e;
            }
        }
        let (mut u, mut v) = (0.0, 0.0);
        for ((li, lj), e) in local.indexed_iter_mut() {
            *e /= total;
            u += *e * ((lj + j0) as f64 + 0.5) / w as f64;
            v += *e * ((li + i0) as f64 + 0.5) / h as f64;
        }
        let conf = local.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
        for ((li, lj), &m) in local.indexed_iter() {
            let dx = ((lj + j0) as f64 + 0.5) / w as f64 - u;
            let dy = ((li + i0) as f64 + 0.5) / h as f64 - v;
            sx += dx * dx * m;
            sy += dy * dy * m;
            sxy += dx * dy * m;
        }
        out.push(PeakKeypoint {
            uv: (u, v),
            features: HeatmapFeatures {
                confidence: conf,
                sigma2_x: sx,
                sigma2_y: sy,
                sigma2_xy: sxy,
            },
            duplicate,
        });
    }
    out.sort_by(|a, b| a.uv.1.partial_cmp(&b.uv.1).expect("finite coords"));
    Ok(out)
}

/// Multi-agent extraction settings for visually identical agents.
#[derive(Debug, Clone, Copy)]
pub struct MultiAgent {
    pub n_agents: usize,
    /// Suppression / window half-size in heatmap cells.
    pub region: usize,
}

/// Run the pose branch over a frame sequence and emit one track record per
/// (frame, keypoint). With `multi`, each heatmap channel yields one record
/// per agent, ordered by the vertical identity rule, and keypoint ids are
/// laid out agent-major (`kp_id = agent * K + channel`).
pub fn extract_tracks(
    state: &ModelState,
    frames: &[Frame],
    batch_size: usize,
    multi: Option<MultiAgent>,
) -> Result<KeypointTracks> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to track".into()));
    }
    let k = state.k();
    let mut records = Vec::with_capacity(frames.len() * k);
    for chunk in frames.chunks(batch_size.max(1)) {
        let refs: Vec<&Frame> = chunk.iter().collect();
        let batch = frames_to_tensor(&refs, state.dtype(), state.device())?;
        let geom = state.geometry(&batch, RunMode::Eval)?;
        for (bi, frame) in chunk.iter().enumerate() {
            for c in 0..k {
                let raw = plane_to_array(&geom.raw, bi, c)?;
                match multi {
                    None => {
                        let (norm, uv) = soft_argmax(&raw)?;
                        let f = features(&norm, uv)?;
                        records.push(TrackRecord {
                            frame: frame.index() as u64,
                            kp_id: c as u32,
                            u: uv.0,
                            v: uv.1,
                            confidence: f.confidence,
                            sigma2_x: f.sigma2_x,
                            sigma2_y: f.sigma2_y,
                            sigma2_xy: f.sigma2_xy,
                        });
                    }
                    Some(ma) => {
                        let peaks = extract_multi_peak(&raw, ma.n_agents, ma.region)?;
                        for (agent, p) in peaks.iter().enumerate() {
                            records.push(TrackRecord {
                                frame: frame.index() as u64,
                                kp_id: (agent * k + c) as u32,
                                u: p.uv.0,
                                v: p.uv.1,
                                confidence: p.features.confidence,
                                sigma2_x: p.features.sigma2_x,
                                sigma2_y: p.features.sigma2_y,
                                sigma2_xy: p.features.sigma2_xy,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(KeypointTracks::new(records))
}
