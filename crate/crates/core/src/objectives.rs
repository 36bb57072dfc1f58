//! Training losses: perceptual reconstruction, rotation equivariance,
//! separation, the optional supervised keypoint term, and the
//! curriculum-gated total.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::model::geometry::gaussian_maps;
use crate::tensorutil::mse;

/// Frozen convolutional feature extractor with tapped intermediate blocks.
///
/// VGG-style layout: blocks of 3x3 convolutions with ReLU, 2x max pooling
/// between blocks, channel width doubling per block. Weights are fixed at
/// construction from a seeded init and are deliberately not variables, so
/// gradients flow through the features to the prediction but never into the
/// extractor.
pub struct PerceptualExtractor {
    blocks: Vec<Vec<(Tensor, Tensor)>>,
}

impl PerceptualExtractor {
    pub fn new(
        width: usize,
        n_blocks: usize,
        dtype: DType,
        device: &Device,
        seed: u64,
    ) -> Result<Self> {
        if n_blocks == 0 || n_blocks > 4 {
            return Err(Error::InvalidArgument(
                "perceptual extractor supports 1..=4 blocks".into(),
            ));
        }
        if width == 0 {
            return Err(Error::InvalidArgument("width must be positive".into()));
        }
        let layers_per_block = [2usize, 2, 3, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        let mut in_c = 3usize;
        for b in 0..n_blocks {
            let out_c = width << b;
            let mut convs = Vec::new();
            for _ in 0..layers_per_block[b] {
                let fan_in = (in_c * 9) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                let n = out_c * in_c * 9;
                let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                let w = Tensor::from_vec(data, (out_c, in_c, 3, 3), device)?.to_dtype(dtype)?;
                let bias = Tensor::zeros(out_c, dtype, device)?;
                convs.push((w, bias));
                in_c = out_c;
            }
            blocks.push(convs);
        }
        Ok(Self { blocks })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Features tapped after each block's final ReLU (before pooling).
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "extractor expects 3-channel input, got {c}"
            )));
        }
        let mut taps = Vec::with_capacity(self.blocks.len());
        let mut y = x.clone();
        for (b, convs) in self.blocks.iter().enumerate() {
            if b > 0 {
                y = y.max_pool2d_with_stride(2, 2)?;
            }
            for (w, bias) in convs {
                let bias = bias.reshape((1, bias.dim(0)?, 1, 1))?;
                y = y.conv2d(w, 1, 1, 1, 1)?.broadcast_add(&bias)?.relu()?;
            }
            taps.push(y.clone());
        }
        Ok(taps)
    }
}

/// Sum over tapped blocks of the mean squared feature distance between the
/// target map and the prediction.
pub fn reconstruction_loss(
    extractor: &PerceptualExtractor,
    target: &Tensor,
    prediction: &Tensor,
) -> Result<Tensor> {
    if target.dims() != prediction.dims() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs prediction {:?}",
            target.dims(),
            prediction.dims()
        )));
    }
    let ft = extractor.features(&target.detach())?;
    let fp = extractor.features(prediction)?;
    let mut total: Option<Tensor> = None;
    for (a, b) in ft.iter().zip(fp.iter()) {
        let term = mse(a, b)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one block"))
}

/// Mean squared error between pseudo-label maps (rotated bottleneck, treated
/// as constants) and the maps predicted on the rotated image.
pub fn rotation_loss(pseudo: &Tensor, predicted: &Tensor) -> Result<Tensor> {
    if pseudo.dims() != predicted.dims() {
        return Err(Error::ShapeMismatch(format!(
            "pseudo {:?} vs predicted {:?}",
            pseudo.dims(),
            predicted.dims()
        )));
    }
    mse(&pseudo.detach(), predicted)
}

/// `sum_{i != j} exp(-|p_i - p_j|^2 / (2 sigma_s^2))` over ordered pairs.
pub fn separation_loss(points: &[(f64, f64)], sigma_s: f64) -> Result<f64> {
    if sigma_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma_s must be positive, got {sigma_s}"
        )));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "separation loss needs at least one point".into(),
        ));
    }
    let denom = 2.0 * sigma_s * sigma_s;
    let mut total = 0.0;
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate() {
            if i != j {
                let d2 = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
                total += (-d2 / denom).exp();
            }
        }
    }
    Ok(total)
}

/// Tensor version over batched keypoints (B, K, 2); returns the batch mean
/// of the per-sample pair sums.
pub fn separation_loss_t(keypoints: &Tensor, sigma_s: f64) -> Result<Tensor> {
    if sigma_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma_s must be positive, got {sigma_s}"
        )));
    }
    let (b, k, _) = keypoints.dims3()?;
    let a = keypoints.reshape((b, k, 1, 2))?;
    let c = keypoints.reshape((b, 1, k, 2))?;
    let d2 = a.broadcast_sub(&c)?.sqr()?.sum(3)?;
    let e = (d2 * (-1.0 / (2.0 * sigma_s * sigma_s)))?.exp()?;
    // The K diagonal terms are exp(0) = 1 each; drop them from the sum.
    let per_sample = (e.sum(2)?.sum(1)? - k as f64)?;
    Ok(per_sample.mean_all()?)
}

/// MSE between heatmaps rendered from annotated points and the predicted
/// rendered maps, over the mapped channels. `mapping` pairs each annotation
/// index with a heatmap channel; every annotation must be mapped.
pub fn supervised_keypoint_loss(
    predicted_rendered: &Tensor,
    annotations: &Tensor,
    mapping: &[(usize, usize)],
    sigma: f64,
) -> Result<Tensor> {
    let (b, k, h, w) = predicted_rendered.dims4()?;
    let (ab, m, two) = annotations.dims3()?;
    if ab != b || two != 2 {
        return Err(Error::ShapeMismatch(format!(
            "annotations {:?} do not match predictions {:?}",
            annotations.dims(),
            predicted_rendered.dims()
        )));
    }
    for a in 0..m {
        if !mapping.iter().any(|(ai, _)| *ai == a) {
            return Err(Error::InvalidArgument(format!(
                "annotation {a} has no mapped heatmap channel"
            )));
        }
    }
    if let Some((ai, ci)) = mapping
        .iter()
        .find(|(ai, ci)| *ai >= m || *ci >= k)
    {
        return Err(Error::InvalidArgument(format!(
            "mapping ({ai}, {ci}) out of range for {m} annotations, {k} channels"
        )));
    }
    let device = predicted_rendered.device();
    let annot_idx: Vec<u32> = mapping.iter().map(|(a, _)| *a as u32).collect();
    let chan_idx: Vec<u32> = mapping.iter().map(|(_, c)| *c as u32).collect();
    let annot_idx = Tensor::from_vec(annot_idx, mapping.len(), device)?;
    let chan_idx = Tensor::from_vec(chan_idx, mapping.len(), device)?;
    let selected_annots = annotations.index_select(&annot_idx, 1)?.contiguous()?;
    let targets = gaussian_maps(&selected_annots, sigma, h, w)?;
    let predicted = predicted_rendered.contiguous()?.index_select(&chan_idx, 1)?;
    mse(&targets.detach(), &predicted)
}

/// Loss weights plus the curriculum epoch, as used by the total objective.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub w_r: f64,
    pub w_s: f64,
    pub sigma_s: f64,
    pub curriculum_epoch: usize,
}

impl From<&LossConfig> for LossWeights {
    fn from(cfg: &LossConfig) -> Self {
        Self {
            w_r: cfg.w_r,
            w_s: cfg.w_s,
            sigma_s: cfg.sigma_s,
            curriculum_epoch: cfg.curriculum_epoch,
        }
    }
}

/// Rotation and separation terms are gated strictly after the curriculum
/// epoch: active iff `epoch > n`.
pub fn curriculum_active(epoch: usize, curriculum_epoch: usize) -> bool {
    epoch > curriculum_epoch
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub recon: f64,
    pub rot: f64,
    pub sep: f64,
    /// Supervised term in semi-supervised mode; always added when present.
    pub sup: Option<f64>,
}

/// `L = L_recon + 1[epoch > n] (w_r L_r + w_s L_s)` plus the supervised term.
pub fn total_loss(parts: &LossParts, weights: &LossWeights, epoch: usize) -> f64 {
    let mut total = parts.recon;
    if curriculum_active(epoch, weights.curriculum_epoch) {
        total += weights.w_r * parts.rot + weights.w_s * parts.sep;
    }
    if let Some(sup) = parts.sup {
        total += sup;
    }
    total
}
