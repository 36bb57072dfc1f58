//! Pose decoder (raw heatmaps) and reconstruction decoder.

use candle_core::Tensor;

use super::geometry::gaussian_maps;
use super::params::{Conv2d, ConvBlock, ParamStore, RunMode};
use crate::error::{Error, Result};

/// Upsampling head that turns the encoder output into K raw heatmaps at
/// `heatmap_stride` of the input resolution.
pub struct PoseDecoder {
    entry: ConvBlock,
    ups: Vec<ConvBlock>,
    head: Conv2d,
}

impl PoseDecoder {
    pub fn new(
        store: &mut ParamStore,
        in_channels: usize,
        k: usize,
        heatmap_stride: usize,
    ) -> Result<Self> {
        let n_ups = (32 / heatmap_stride).trailing_zeros() as usize;
        let width = (in_channels / 8).clamp(32, 256);
        let entry = ConvBlock::new(store, "pose.entry", in_channels, width, 1, 1)?;
        let ups = (0..n_ups)
            .map(|i| ConvBlock::new(store, &format!("pose.up{i}"), width, width, 3, 1))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::new(store, "pose.head", width, k, 3, 1, 1, true)?;
        Ok(Self { entry, ups, head })
    }

    pub fn forward(&self, feature: &Tensor, mode: RunMode) -> Result<Tensor> {
        let mut x = self.entry.forward(feature, mode)?;
        for block in &self.ups {
            let (_, _, h, w) = x.dims4()?;
            x = x.upsample_nearest2d(h * 2, w * 2)?;
            x = block.forward(&x, mode)?;
        }
        self.head.forward(&x)
    }
}

/// Five upsampling stages from 1/32 back to full resolution; at every stage
/// the keypoint Gaussians are rendered at the stage resolution and
/// concatenated to the features (2K channels, or K in single-branch mode).
pub struct ReconstructionDecoder {
    blocks: Vec<ConvBlock>,
    final_conv: Conv2d,
    single_branch: bool,
    sigma: f64,
}

impl ReconstructionDecoder {
    pub fn new(
        store: &mut ParamStore,
        in_channels: usize,
        k: usize,
        single_branch: bool,
        sigma: f64,
    ) -> Result<Self> {
        let geom = if single_branch { k } else { 2 * k };
        let mut sched = vec![in_channels];
        for i in 1..=5 {
            sched.push((in_channels >> i).max(8));
        }
        let blocks = (0..5)
            .map(|i| {
                ConvBlock::new(
                    store,
                    &format!("recon.block{i}"),
                    sched[i] + geom,
                    sched[i + 1],
                    3,
                    1,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_conv = Conv2d::new(store, "recon.final", sched[5], 3, 3, 1, 1, true)?;
        Ok(Self {
            blocks,
            final_conv,
            single_branch,
            sigma,
        })
    }

    pub fn geometry_channels(&self, k: usize) -> usize {
        if self.single_branch {
            k
        } else {
            2 * k
        }
    }

    /// `kp_ref` must be `Some` exactly when the decoder was built dual-branch.
    pub fn forward(
        &self,
        appearance: &Tensor,
        kp_ref: Option<&Tensor>,
        kp_fut: &Tensor,
        mode: RunMode,
    ) -> Result<Tensor> {
        if self.single_branch != kp_ref.is_none() {
            return Err(Error::InvalidArgument(
                "geometry branches do not match decoder mode".into(),
            ));
        }
        let mut x = appearance.clone();
        for block in &self.blocks {
            let (_, _, h, w) = x.dims4()?;
            x = x.upsample_nearest2d(h * 2, w * 2)?;
            let (_, _, h, w) = x.dims4()?;
            let mut parts = vec![x.clone()];
            if let Some(kp) = kp_ref {
                parts.push(gaussian_maps(kp, self.sigma, h, w)?);
            }
            parts.push(gaussian_maps(kp_fut, self.sigma, h, w)?);
            x = Tensor::cat(&parts.iter().collect::<Vec<_>>(), 1)?;
            x = block.forward(&x, mode)?;
        }
        self.final_conv.forward(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn pose_decoder_resolution_contract() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(dev.clone(), DType::F32, 0);
        let dec = PoseDecoder::new(&mut store, 256, 10, 4).unwrap();
        let feat = Tensor::zeros((1, 256, 8, 8), DType::F32, &dev).unwrap();
        let raw = dec.forward(&feat, RunMode::FROZEN).unwrap();
        assert_eq!(raw.dims(), &[1, 10, 64, 64]);
    }

    #[test]
    fn recon_decoder_output_shape_and_branching() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(dev.clone(), DType::F32, 0);
        let dec = ReconstructionDecoder::new(&mut store, 128, 4, false, 0.05).unwrap();
        assert_eq!(dec.geometry_channels(4), 8);
        let feat = Tensor::zeros((2, 128, 2, 2), DType::F32, &dev).unwrap();
        let kp = Tensor::from_vec(
            vec![0.3f32, 0.4, 0.6, 0.7, 0.2, 0.2, 0.8, 0.8],
            (1, 4, 2),
            &dev,
        )
        .unwrap()
        .broadcast_as((2, 4, 2))
        .unwrap()
        .contiguous()
        .unwrap();
        let out = dec.forward(&feat, Some(&kp), &kp, RunMode::FROZEN).unwrap();
        assert_eq!(out.dims(), &[2, 3, 64, 64]);
        assert!(dec.forward(&feat, None, &kp, RunMode::FROZEN).is_err());
    }
}
