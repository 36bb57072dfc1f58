//! Geometry bottleneck math: spatial softmax and Gaussian map rendering.
//!
//! Normalized coordinates put cell (i, j) of an H' x W' grid at
//! (u, v) = ((j + 0.5) / W', (i + 0.5) / H'), u horizontal, v vertical; the
//! convention is shared by every serialization in the toolkit.

use candle_core::{DType, Device, Tensor, D};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Spatial softmax of a single raw heatmap plus the expected coordinate.
pub fn soft_argmax(raw: &Array2<f32>) -> Result<(Array2<f32>, (f64, f64))> {
    let (h, w) = raw.dim();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("soft_argmax input".into()));
    }
    let max = raw.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut norm = Array2::<f64>::zeros((h, w));
    let mut total = 0.0;
    for ((i, j), &v) in raw.indexed_iter() {
        let e = ((f64::from(v)) - max).exp();
        norm[(i, j)] = e;
        total += e;
    }
    let mut u = 0.0;
    let mut v = 0.0;
    for ((i, j), e) in norm.indexed_iter_mut() {
        *e /= total;
        u += *e * (j as f64 + 0.5) / w as f64;
        v += *e * (i as f64 + 0.5) / h as f64;
    }
    Ok((norm.mapv(|x| x as f32), (u, v)))
}

/// Unnormalized Gaussian map with peak 1 at the keypoint:
/// `exp(-|c - p|^2 / (2 std^2))` over normalized cell centers `c`.
pub fn render_gaussian(
    keypoint: (f64, f64),
    std: f64,
    resolution: (usize, usize),
) -> Result<Array2<f32>> {
    let (u, v) = keypoint;
    let (h, w) = resolution;
    if std <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gaussian std must be positive, got {std}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty render resolution".into()));
    }
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!(
            "keypoint ({u}, {v}) outside [0,1]^2"
        )));
    }
    let denom = 2.0 * std * std;
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let cu = (j as f64 + 0.5) / w as f64;
        let cv = (i as f64 + 0.5) / h as f64;
        let d2 = (cu - u).powi(2) + (cv - v).powi(2);
        (-d2 / denom).exp() as f32
    }))
}

/// Normalized cell-center coordinate grids, shaped for broadcasting against
/// (B, K, H, W): `gx` is (1, 1, 1, W) and `gy` is (1, 1, H, 1).
pub fn coord_grids(h: usize, w: usize, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    let gx: Vec<f64> = (0..w).map(|j| (j as f64 + 0.5) / w as f64).collect();
    let gy: Vec<f64> = (0..h).map(|i| (i as f64 + 0.5) / h as f64).collect();
    let gx = Tensor::from_vec(gx, (1, 1, 1, w), device)?.to_dtype(dtype)?;
    let gy = Tensor::from_vec(gy, (1, 1, h, 1), device)?.to_dtype(dtype)?;
    Ok((gx, gy))
}

/// Render a batch of keypoints (B, K, 2) into Gaussian maps (B, K, H, W);
/// differentiable in the keypoints.
pub fn gaussian_maps(keypoints: &Tensor, std: f64, h: usize, w: usize) -> Result<Tensor> {
    if std <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gaussian std must be positive, got {std}"
        )));
    }
    let (b, k, two) = keypoints.dims3()?;
    if two != 2 {
        return Err(Error::ShapeMismatch(format!(
            "keypoints must be (B, K, 2), got {:?}",
            keypoints.dims()
        )));
    }
    let (gx, gy) = coord_grids(h, w, keypoints.dtype(), keypoints.device())?;
    let u = keypoints.narrow(D::Minus1, 0, 1)?.reshape((b, k, 1, 1))?;
    let v = keypoints.narrow(D::Minus1, 1, 1)?.reshape((b, k, 1, 1))?;
    let dx = gx.broadcast_sub(&u)?;
    let dy = gy.broadcast_sub(&v)?;
    let d2 = (dx.sqr()?.broadcast_add(&dy.sqr()?))?;
    Ok((d2 * (-1.0 / (2.0 * std * std)))?.exp()?)
}

/// Spatial softmax over each channel of raw heatmaps (B, K, H, W), returning
/// the normalized maps and the expected coordinates (B, K, 2).
pub fn spatial_softmax(raw: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, k, h, w) = raw.dims4()?;
    let flat = raw.reshape((b, k, h * w))?;
    let norm = candle_nn::ops::softmax(&flat, D::Minus1)?;
    let mut coords = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            coords.push((j as f64 + 0.5) / w as f64);
            coords.push((i as f64 + 0.5) / h as f64);
        }
    }
    let coords = Tensor::from_vec(coords, (h * w, 2), raw.device())?.to_dtype(raw.dtype())?;
    let kp = norm.broadcast_matmul(&coords)?;
    Ok((norm.reshape((b, k, h, w))?, kp))
}
