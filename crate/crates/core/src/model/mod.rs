//! The discovery network: shared appearance encoder, pose decoder with a
//! geometry bottleneck, and reconstruction decoder.

pub mod checkpoint;
pub mod decoders;
pub mod encoder;
pub mod geometry;
pub mod optim;
pub mod params;

use candle_core::{DType, Tensor};

pub use geometry::{gaussian_maps, render_gaussian, soft_argmax, spatial_softmax};
pub use params::RunMode;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use decoders::{PoseDecoder, ReconstructionDecoder};
use encoder::ResidualEncoder;
use params::ParamStore;

/// Geometry bottleneck of one batch of frames: raw heatmaps, their spatial
/// softmax, the extracted keypoints, and the re-rendered Gaussian maps.
pub struct GeometryBottleneck {
    pub raw: Tensor,
    pub normalized: Tensor,
    pub keypoints: Tensor,
    pub rendered: Tensor,
}

impl GeometryBottleneck {
    pub fn from_raw(raw: Tensor, sigma: f64) -> Result<Self> {
        let (_, _, h, w) = raw.dims4()?;
        let (normalized, keypoints) = spatial_softmax(&raw)?;
        let rendered = gaussian_maps(&keypoints, sigma, h, w)?;
        Ok(Self {
            raw,
            normalized,
            keypoints,
            rendered,
        })
    }

    /// Keypoints as (u, v) pairs per batch element.
    pub fn keypoints_vec(&self) -> Result<Vec<Vec<(f64, f64)>>> {
        let (b, k, _) = self.keypoints.dims3()?;
        let flat = self
            .keypoints
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Ok((0..b)
            .map(|bi| {
                (0..k)
                    .map(|ki| (flat[(bi * k + ki) * 2], flat[(bi * k + ki) * 2 + 1]))
                    .collect()
            })
            .collect())
    }
}

pub struct ForwardOutput {
    pub reconstruction: Tensor,
    pub geom_ref: GeometryBottleneck,
    pub geom_fut: GeometryBottleneck,
}

pub struct ModelState {
    config: ModelConfig,
    resolution: usize,
    store: ParamStore,
    encoder: ResidualEncoder,
    pose: PoseDecoder,
    recon: ReconstructionDecoder,
    step: u64,
}

impl ModelState {
    pub fn new(
        config: &ModelConfig,
        resolution: usize,
        dtype: DType,
        seed: u64,
    ) -> Result<Self> {
        if resolution % 32 != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} must be a multiple of 32"
            )));
        }
        let mut store = ParamStore::new(candle_core::Device::Cpu, dtype, seed);
        let encoder = ResidualEncoder::new(&mut store, &config.encoder_blocks, config.encoder_width)?;
        let pose = PoseDecoder::new(
            &mut store,
            encoder.out_channels(),
            config.k,
            config.heatmap_stride,
        )?;
        let recon = ReconstructionDecoder::new(
            &mut store,
            encoder.out_channels(),
            config.k,
            config.single_branch,
            config.sigma,
        )?;
        Ok(Self {
            config: config.clone(),
            resolution,
            store,
            encoder,
            pose,
            recon,
            step: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn sigma(&self) -> f64 {
        self.config.sigma
    }

    pub fn heatmap_size(&self) -> usize {
        self.resolution / self.config.heatmap_stride
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &candle_core::Device {
        self.store.device()
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Appearance features at 1/32 of the input resolution.
    pub fn encode(&self, frames: &Tensor, mode: RunMode) -> Result<Tensor> {
        let (_, c, h, w) = frames.dims4()?;
        if c != 3 || h != self.resolution || w != self.resolution {
            return Err(Error::ShapeMismatch(format!(
                "expected (B, 3, {r}, {r}) input, got {:?}",
                frames.dims(),
                r = self.resolution
            )));
        }
        self.encoder.forward(frames, mode)
    }

    /// K raw heatmaps at `resolution / heatmap_stride`.
    pub fn pose_decode(&self, feature: &Tensor, mode: RunMode) -> Result<Tensor> {
        self.pose.forward(feature, mode)
    }

    /// Encoder + pose decoder + bottleneck for one batch of frames.
    pub fn geometry(&self, frames: &Tensor, mode: RunMode) -> Result<GeometryBottleneck> {
        let feature = self.encode(frames, mode)?;
        let raw = self.pose_decode(&feature, mode)?;
        GeometryBottleneck::from_raw(raw, self.config.sigma)
    }

    /// Decode the difference reconstruction from appearance and geometry.
    pub fn reconstruct(
        &self,
        appearance: &Tensor,
        geom_ref: Option<&GeometryBottleneck>,
        geom_fut: &GeometryBottleneck,
        mode: RunMode,
    ) -> Result<Tensor> {
        for g in [Some(geom_fut), geom_ref].into_iter().flatten() {
            let (_, k, _) = g.keypoints.dims3()?;
            if k != self.config.k {
                return Err(Error::ShapeMismatch(format!(
                    "geometry has {k} keypoints, model expects {}",
                    self.config.k
                )));
            }
        }
        self.recon.forward(
            appearance,
            geom_ref.map(|g| &g.keypoints),
            &geom_fut.keypoints,
            mode,
        )
    }

    /// Full forward pass over a batch of frame pairs. Appearance comes from
    /// the reference frames only; geometry from both frames through the
    /// shared encoder and pose decoder.
    pub fn forward_pair(
        &self,
        references: &Tensor,
        futures: &Tensor,
        mode: RunMode,
    ) -> Result<ForwardOutput> {
        let appearance = self.encode(references, mode)?;
        let raw_ref = self.pose_decode(&appearance, mode)?;
        let geom_ref = GeometryBottleneck::from_raw(raw_ref, self.config.sigma)?;
        let geom_fut = self.geometry(futures, mode)?;
        let geom_ref_arg = if self.config.single_branch {
            None
        } else {
            Some(&geom_ref)
        };
        let reconstruction = self.reconstruct(&appearance, geom_ref_arg, &geom_fut, mode)?;
        Ok(ForwardOutput {
            reconstruction,
            geom_ref,
            geom_fut,
        })
    }

    pub fn trainable_vars(&self) -> Vec<candle_core::Var> {
        self.store.trainable_vars()
    }

    pub fn named_vars(&self) -> &[(String, candle_core::Var)] {
        self.store.named_vars()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use candle_core::Device;

    fn tiny_config(k: usize) -> ModelConfig {
        ModelConfig {
            k,
            sigma: 0.08,
            single_branch: false,
            encoder_blocks: vec![1, 1, 1, 1],
            encoder_width: 8,
            heatmap_stride: 4,
        }
    }

    fn rand_frames(b: usize, res: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..b * 3 * res * res).map(|_| rng.gen()).collect();
        Tensor::from_vec(data, (b, 3, res, res), &Device::Cpu).unwrap()
    }

    #[test]
    fn geometry_shapes_and_normalization() {
        let state = ModelState::new(&tiny_config(4), 64, DType::F32, 0).unwrap();
        let frames = rand_frames(2, 64, 1);
        let geom = state.geometry(&frames, RunMode::FROZEN).unwrap();
        assert_eq!(geom.raw.dims(), &[2, 4, 16, 16]);
        assert_eq!(geom.keypoints.dims(), &[2, 4, 2]);
        // Every normalized heatmap sums to 1.
        let sums = geom
            .normalized
            .sum_keepdim(2)
            .unwrap()
            .sum_keepdim(3)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        for s in sums {
            assert!((s - 1.0).abs() < 1e-5);
        }
        for kp in geom.keypoints_vec().unwrap().concat() {
            assert!((0.0..=1.0).contains(&kp.0) && (0.0..=1.0).contains(&kp.1));
        }
    }

    #[test]
    fn forward_pair_shapes_and_determinism() {
        let state = ModelState::new(&tiny_config(4), 64, DType::F32, 0).unwrap();
        let refs = rand_frames(1, 64, 2);
        let futs = rand_frames(1, 64, 3);
        let a = state.forward_pair(&refs, &futs, RunMode::Eval).unwrap();
        assert_eq!(a.reconstruction.dims(), &[1, 3, 64, 64]);
        let b = state.forward_pair(&refs, &futs, RunMode::Eval).unwrap();
        let va = a.reconstruction.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = b.reconstruction.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
        let ka = a.geom_ref.keypoints.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let kb = b.geom_ref.keypoints.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(ka, kb);
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let state = ModelState::new(&tiny_config(2), 64, DType::F32, 0).unwrap();
        let frames = rand_frames(1, 32, 0);
        assert!(state.encode(&frames, RunMode::Eval).is_err());
        assert!(ModelState::new(&tiny_config(2), 100, DType::F32, 0).is_err());
    }

    #[test]
    fn keypoint_count_mismatch_is_rejected() {
        let state = ModelState::new(&tiny_config(2), 64, DType::F32, 0).unwrap();
        let other = ModelState::new(&tiny_config(3), 64, DType::F32, 0).unwrap();
        let frames = rand_frames(1, 64, 0);
        let appearance = state.encode(&frames, RunMode::FROZEN).unwrap();
        let geom_bad = other.geometry(&frames, RunMode::FROZEN).unwrap();
        assert!(state
            .reconstruct(&appearance, Some(&geom_bad), &geom_bad, RunMode::FROZEN)
            .is_err());
    }
}
