//! Conversions between frame arrays and tensors, plus exact right-angle
//! rotations used by the equivariance machinery.

use candle_core::{DType, Device, Tensor, D};
use ndarray::{Array2, Array3};

use crate::data::Frame;
use crate::error::Result;

/// Right-angle rotation, counterclockwise in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationAngle {
    R90,
    R180,
    R270,
}

impl RotationAngle {
    pub const ALL: [RotationAngle; 3] = [RotationAngle::R90, RotationAngle::R180, RotationAngle::R270];

    pub fn quarter_turns(self) -> usize {
        match self {
            RotationAngle::R90 => 1,
            RotationAngle::R180 => 2,
            RotationAngle::R270 => 3,
        }
    }

    pub fn degrees(self) -> u32 {
        self.quarter_turns() as u32 * 90
    }
}

/// Stack frames into a (B, 3, H, W) tensor.
pub fn frames_to_tensor(frames: &[&Frame], dtype: DType, device: &Device) -> Result<Tensor> {
    let (h, w, c) = frames[0].pixels().dim();
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for f in frames {
        let px = f.pixels();
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    data.push(px[(i, j, ch)]);
                }
            }
        }
    }
    let t = Tensor::from_vec(data, (frames.len(), c, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Stack H x W x C maps into a (B, C, H, W) tensor.
pub fn maps_to_tensor(maps: &[&Array3<f32>], dtype: DType, device: &Device) -> Result<Tensor> {
    let (h, w, c) = maps[0].dim();
    let mut data = Vec::with_capacity(maps.len() * c * h * w);
    for m in maps {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    data.push(m[(i, j, ch)]);
                }
            }
        }
    }
    let t = Tensor::from_vec(data, (maps.len(), c, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Extract one (H, W) channel plane from a (B, C, H, W) tensor.
pub fn plane_to_array(t: &Tensor, b: usize, c: usize) -> Result<Array2<f32>> {
    let plane = t.narrow(0, b, 1)?.narrow(1, c, 1)?.squeeze(0)?.squeeze(0)?;
    let (h, w) = plane.dims2()?;
    let v = plane.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array2::from_shape_vec((h, w), v).expect("shape matches"))
}

fn flip(t: &Tensor, dim: usize) -> Result<Tensor> {
    let n = t.dim(dim)?;
    let idx: Vec<u32> = (0..n as u32).rev().collect();
    let idx = Tensor::from_vec(idx, n, t.device())?;
    Ok(t.index_select(&idx, dim)?)
}

/// Rotate the trailing two spatial dims of a (.., H, W) tensor by 90 degrees
/// counterclockwise: out[i, j] = in[j, W-1-i]. Lossless for square inputs.
pub fn rot90(t: &Tensor) -> Result<Tensor> {
    let rank = t.rank();
    let transposed = t.transpose(rank - 2, rank - 1)?.contiguous()?;
    Ok(flip(&transposed, rank - 2)?.contiguous()?)
}

/// Rotate by the given right angle (counterclockwise).
pub fn rotate(t: &Tensor, angle: RotationAngle) -> Result<Tensor> {
    let mut out = t.clone();
    for _ in 0..angle.quarter_turns() {
        out = rot90(&out)?;
    }
    Ok(out)
}

/// Map normalized keypoints (u, v) under a counterclockwise rotation of the
/// underlying square image: 90 degrees sends (u, v) to (v, 1 - u).
pub fn rotate_keypoints(kp: &Tensor, angle: RotationAngle) -> Result<Tensor> {
    let u = kp.narrow(D::Minus1, 0, 1)?;
    let v = kp.narrow(D::Minus1, 1, 1)?;
    let one_minus = |x: &Tensor| -> Result<Tensor> { Ok((x.neg()? + 1.0)?) };
    let (nu, nv) = match angle {
        RotationAngle::R90 => (v.clone(), one_minus(&u)?),
        RotationAngle::R180 => (one_minus(&u)?, one_minus(&v)?),
        RotationAngle::R270 => (one_minus(&v)?, u.clone()),
    };
    Ok(Tensor::cat(&[&nu, &nv], D::Minus1)?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}
