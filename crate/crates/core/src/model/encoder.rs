//! Residual appearance encoder.
//!
//! Bottleneck-block architecture with a 7x7 stem and four stages; the
//! default `[3, 4, 6, 3]` blocks at width 64 give the 50-layer network with
//! a 2048-channel output at 1/32 of the input resolution. Narrower and
//! shallower settings are used for CPU-scale experiments.

use candle_core::Tensor;

use super::params::{BatchNorm2d, Conv2d, ParamStore, RunMode};
use crate::error::Result;

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    const EXPANSION: usize = 4;

    fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        width: usize,
        stride: usize,
    ) -> Result<Self> {
        let out_c = width * Self::EXPANSION;
        let downsample = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::new(store, &format!("{name}.down.conv"), in_c, out_c, 1, stride, 0, false)?,
                BatchNorm2d::new(store, &format!("{name}.down.bn"), out_c)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), in_c, width, 1, 1, 0, false)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), width)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), width, width, 3, stride, 1, false)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), width)?,
            conv3: Conv2d::new(store, &format!("{name}.conv3"), width, out_c, 1, 1, 0, false)?,
            bn3: BatchNorm2d::new(store, &format!("{name}.bn3"), out_c)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, mode: RunMode) -> Result<Tensor> {
        let mut y = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu()?;
        y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?.relu()?;
        y = self.bn3.forward(&self.conv3.forward(&y)?, mode)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

pub struct ResidualEncoder {
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<Vec<Bottleneck>>,
    out_channels: usize,
}

impl ResidualEncoder {
    /// `blocks` holds the four per-stage block counts; `width` the channel
    /// width of the first stage.
    pub fn new(store: &mut ParamStore, blocks: &[usize], width: usize) -> Result<Self> {
        let stem_conv = Conv2d::new(store, "encoder.stem.conv", 3, width, 7, 2, 3, false)?;
        let stem_bn = BatchNorm2d::new(store, "encoder.stem.bn", width)?;
        let mut stages = Vec::new();
        let mut in_c = width;
        for (s, &n_blocks) in blocks.iter().enumerate() {
            let stage_width = width << s;
            let mut stage = Vec::new();
            for b in 0..n_blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let block = Bottleneck::new(
                    store,
                    &format!("encoder.stage{s}.block{b}"),
                    in_c,
                    stage_width,
                    stride,
                )?;
                in_c = stage_width * Bottleneck::EXPANSION;
                stage.push(block);
            }
            stages.push(stage);
        }
        Ok(Self {
            stem_conv,
            stem_bn,
            stages,
            out_channels: in_c,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Total spatial downsampling factor (stem /4, then /2 per later stage).
    pub const DOWNSAMPLE: usize = 32;

    pub fn forward(&self, x: &Tensor, mode: RunMode) -> Result<Tensor> {
        let mut y = self.stem_bn.forward(&self.stem_conv.forward(x)?, mode)?.relu()?;
        y = y.max_pool2d_with_stride(2, 2)?;
        for stage in &self.stages {
            for block in stage {
                y = block.forward(&y, mode)?;
            }
        }
        Ok(y)
    }
}
