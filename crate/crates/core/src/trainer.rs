//! Optimization loop: batching, rotation augmentation, curriculum gating,
//! convergence stopping, checkpointing, and semi-supervised mixing.

use std::path::Path;
use std::sync::Arc;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, TrainMode};
use crate::data::{pair_indices, Frame, FramePair};
use crate::difftarget::compute_target;
use crate::error::{Error, Result};
use crate::model::checkpoint::save_checkpoint;
use crate::model::optim::Adam;
use crate::model::{ModelState, RunMode};
use crate::objectives::{
    curriculum_active, reconstruction_loss, rotation_loss, separation_loss_t,
    supervised_keypoint_loss, LossWeights, PerceptualExtractor,
};
use crate::tensorutil::{frames_to_tensor, maps_to_tensor, rotate, scalar_f64, RotationAngle};

/// A source of training pairs; implementations may build pairs lazily.
pub trait PairSource: Send + Sync {
    fn len(&self) -> usize;
    fn pair(&self, idx: usize) -> Result<FramePair>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pairs sampled from an in-memory frame sequence.
pub struct VideoPairs {
    frames: Arc<Vec<Frame>>,
    indices: Vec<(usize, usize)>,
    gap: usize,
}

impl VideoPairs {
    pub fn from_frames(frames: Vec<Frame>, gap: usize, stride: usize) -> Result<Self> {
        let indices = pair_indices(frames.len(), gap, stride)?;
        Ok(Self {
            frames: Arc::new(frames),
            indices,
            gap,
        })
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }
}

impl PairSource for VideoPairs {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn pair(&self, idx: usize) -> Result<FramePair> {
        let (i, j) = self.indices[idx];
        FramePair::new(self.frames[i].clone(), self.frames[j].clone(), self.gap)
    }
}

/// A frame with annotated keypoints in normalized coordinates.
#[derive(Debug, Clone)]
pub struct AnnotatedFrame {
    pub frame: Frame,
    pub points: Vec<(f64, f64)>,
}

/// Labeled data for semi-supervised training; `mapping` pairs annotation
/// indices with heatmap channels.
#[derive(Debug, Clone)]
pub struct SupervisedSet {
    pub frames: Vec<AnnotatedFrame>,
    pub mapping: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub recon: f64,
    pub rot: f64,
    pub sep: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub curves: Vec<StepRecord>,
    pub epochs_run: usize,
    pub converged: bool,
}

/// Loss-curve CSV with the `step,recon,rot,sep,total` header.
pub fn curves_to_csv(curves: &[StepRecord]) -> String {
    let mut out = String::from("step,recon,rot,sep,total\n");
    for r in curves {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.recon, r.rot, r.sep, r.total
        ));
    }
    out
}

/// Rotation-equivariance contribution for a batch of reference frames: for
/// each angle, the bottleneck of the unrotated frames is rotated into pseudo
/// labels and compared against the bottleneck predicted on rotated frames.
pub fn rotation_step(
    state: &ModelState,
    references: &Tensor,
    angles: &[RotationAngle],
    mode: RunMode,
) -> Result<Tensor> {
    let geom = state.geometry(references, mode)?;
    let mut total: Option<Tensor> = None;
    for &angle in angles {
        let pseudo = rotate(&geom.rendered, angle)?.detach();
        let rotated = rotate(references, angle)?;
        let geom_rot = state.geometry(&rotated, mode)?;
        let term = rotation_loss(&pseudo, &geom_rot.rendered)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("no rotation angles given".into()))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub struct TrainOptions<'a> {
    /// Where checkpoints are written; no checkpoints when absent.
    pub out_dir: Option<&'a Path>,
    pub verbose: bool,
    /// Optimizer restored from a checkpoint; resume reproduces the original
    /// run only when the moments are carried over.
    pub resume_optimizer: Option<Adam>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            out_dir: None,
            verbose: false,
            resume_optimizer: None,
        }
    }
}

/// Train until the epoch cap or convergence of the reconstruction loss.
///
/// Deterministic for a fixed seed: batch order, rotation angles, and all
/// parameter updates derive from the config seed and the absolute epoch
/// index, so a resumed run continues the original schedule.
pub fn train(
    source: &dyn PairSource,
    supervised: Option<&SupervisedSet>,
    cfg: &Config,
    state: &mut ModelState,
    mut options: TrainOptions,
) -> Result<TrainOutcome> {
    if source.is_empty() {
        return Err(Error::InvalidArgument("pair source is empty".into()));
    }
    if cfg.train.mode == TrainMode::SemiSupervised
        && supervised.is_none_or(|s| s.frames.is_empty())
    {
        return Err(Error::InvalidArgument(
            "semi-supervised mode needs annotated frames".into(),
        ));
    }
    let weights = LossWeights::from(&cfg.loss);
    let dtype = state.dtype();
    let device = state.device().clone();
    let extractor = PerceptualExtractor::new(
        cfg.loss.perceptual_width,
        cfg.loss.perceptual_blocks,
        dtype,
        &device,
        cfg.train.seed.wrapping_add(0x5EED_FEA7),
    )?;
    let mut optimizer = match options.resume_optimizer.take() {
        Some(opt) => opt,
        None => Adam::new(state.named_vars(), cfg.train.learning_rate)?,
    };

    let batch = cfg.train.batch_size;
    let steps_per_epoch = source.len().div_ceil(batch);
    let start_epoch = (state.step() as usize) / steps_per_epoch;
    let mut curves = Vec::new();
    let mut epoch_recon = Vec::new();
    let mut converged = false;
    let mut epochs_run = 0;

    for epoch in start_epoch..cfg.train.epochs {
        let mut rng = epoch_rng(cfg.train.seed, epoch);
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut rng);
        let mut sup_order: Vec<usize> = supervised
            .map(|s| (0..s.frames.len()).collect())
            .unwrap_or_default();
        sup_order.shuffle(&mut rng);
        let mut sup_cursor = 0usize;

        let mut recon_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(batch) {
            let pairs: Vec<FramePair> = chunk
                .iter()
                .map(|&i| source.pair(i))
                .collect::<Result<_>>()?;
            let refs: Vec<&Frame> = pairs.iter().map(|p| &p.reference).collect();
            let futs: Vec<&Frame> = pairs.iter().map(|p| &p.future).collect();
            let targets = pairs
                .iter()
                .map(|p| compute_target(p, &cfg.target).map(|t| t.map))
                .collect::<Result<Vec<_>>>()?;
            let refs_t = frames_to_tensor(&refs, dtype, &device)?;
            let futs_t = frames_to_tensor(&futs, dtype, &device)?;
            let target_t = maps_to_tensor(&targets.iter().collect::<Vec<_>>(), dtype, &device)?;

            let out = state.forward_pair(&refs_t, &futs_t, RunMode::TRAIN)?;
            let recon = reconstruction_loss(&extractor, &target_t, &out.reconstruction)?;

            let gated = curriculum_active(epoch, weights.curriculum_epoch);
            let mut total = recon.clone();
            let mut rot_v = 0.0;
            let mut sep_v = 0.0;
            if gated {
                if weights.w_r > 0.0 {
                    // One angle per batch bounds the augmentation cost.
                    let angle = RotationAngle::ALL[rng.gen_range(0..3)];
                    let rot = rotation_step(state, &refs_t, &[angle], RunMode::TRAIN)?;
                    rot_v = scalar_f64(&rot)?;
                    total = (total + (rot * weights.w_r)?)?;
                }
                if weights.w_s > 0.0 {
                    let sep = ((separation_loss_t(&out.geom_ref.keypoints, weights.sigma_s)?
                        + separation_loss_t(&out.geom_fut.keypoints, weights.sigma_s)?)?
                        * 0.5)?;
                    sep_v = scalar_f64(&sep)?;
                    total = (total + (sep * weights.w_s)?)?;
                }
            }
            if let Some(sup) = supervised.filter(|_| cfg.train.mode == TrainMode::SemiSupervised)
            {
                let take = batch.min(sup.frames.len());
                let picks: Vec<usize> = (0..take)
                    .map(|o| sup_order[(sup_cursor + o) % sup_order.len()])
                    .collect();
                sup_cursor += take;
                let ann_frames: Vec<&Frame> =
                    picks.iter().map(|&i| &sup.frames[i].frame).collect();
                let m = sup.frames[picks[0]].points.len();
                let mut coords = Vec::with_capacity(take * m * 2);
                for &i in &picks {
                    for &(u, v) in &sup.frames[i].points {
                        coords.push(u);
                        coords.push(v);
                    }
                }
                let ann_t = frames_to_tensor(&ann_frames, dtype, &device)?;
                let coords_t =
                    Tensor::from_vec(coords, (take, m, 2), &device)?.to_dtype(dtype)?;
                let geom = state.geometry(&ann_t, RunMode::TRAIN)?;
                let sup_loss = supervised_keypoint_loss(
                    &geom.rendered,
                    &coords_t,
                    &sup.mapping,
                    state.sigma(),
                )?;
                total = (total + sup_loss)?;
            }

            let recon_v = scalar_f64(&recon)?;
            let total_v = scalar_f64(&total)?;
            if !total_v.is_finite() {
                if let Some(dir) = options.out_dir {
                    let _ = save_checkpoint(
                        state,
                        &cfg.target,
                        Some(&optimizer),
                        &dir.join("diagnostic.safetensors"),
                    );
                }
                return Err(Error::NonFinite(format!(
                    "training loss at step {}",
                    state.step()
                )));
            }

            let grads = total.backward()?;
            optimizer.step(&grads)?;
            state.set_step(state.step() + 1);
            recon_sum += recon_v;
            steps += 1;
            curves.push(StepRecord {
                step: state.step(),
                epoch,
                recon: recon_v,
                rot: rot_v,
                sep: sep_v,
                total: total_v,
            });
        }
        epochs_run += 1;
        let epoch_mean = recon_sum / steps.max(1) as f64;
        epoch_recon.push(epoch_mean);
        if options.verbose {
            eprintln!("epoch {epoch}: recon {epoch_mean:.6}");
        }

        if let Some(dir) = options.out_dir {
            let cadence = cfg.train.checkpoint_every.max(1);
            if (epoch + 1) % cadence == 0 || epoch + 1 == cfg.train.epochs {
                save_checkpoint(
                    state,
                    &cfg.target,
                    Some(&optimizer),
                    &dir.join(format!("checkpoint-epoch-{:04}.safetensors", epoch + 1)),
                )?;
            }
        }

        // Convergence: smoothed reconstruction improvement below tolerance
        // across the window.
        let w = cfg.train.convergence_window;
        if epoch_recon.len() > w {
            let past = epoch_recon[epoch_recon.len() - 1 - w];
            let now = epoch_mean;
            if past > 0.0 && (past - now) / past < cfg.train.convergence_tol {
                converged = true;
            }
        }
        if converged {
            break;
        }
    }

    if let Some(dir) = options.out_dir {
        save_checkpoint(state, &cfg.target, Some(&optimizer), &dir.join("model.safetensors"))?;
    }
    Ok(TrainOutcome {
        curves,
        epochs_run,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Config, TargetKind};
    use crate::data::synth::{generate_synthetic, SyntheticScene};
    use candle_core::DType;

    fn tiny_config() -> Config {
        let mut cfg = Config::default();
        cfg.data.resolution = 32;
        cfg.data.gap = 2;
        cfg.data.stride = 5;
        cfg.model.k = 2;
        cfg.model.sigma = 0.1;
        cfg.model.encoder_blocks = vec![1, 1, 1, 1];
        cfg.model.encoder_width = 4;
        cfg.model.heatmap_stride = 8;
        cfg.target.kind = TargetKind::AbsDiff;
        cfg.loss.perceptual_width = 4;
        cfg.loss.perceptual_blocks = 2;
        cfg.loss.curriculum_epoch = 0;
        cfg.train.batch_size = 2;
        cfg.train.epochs = 2;
        cfg.train.seed = 3;
        cfg
    }

    fn tiny_source(cfg: &Config, seed: u64) -> VideoPairs {
        let scene = SyntheticScene::moving_sprites(cfg.data.resolution, 1, 24, 9.0, seed).unwrap();
        let (frames, _) = generate_synthetic(&scene, 24, seed).unwrap();
        VideoPairs::from_frames(frames, cfg.data.gap, cfg.data.stride).unwrap()
    }

    #[test]
    fn zero_lr_single_step_leaves_parameters_unchanged() {
        let mut cfg = tiny_config();
        cfg.train.learning_rate = f64::MIN_POSITIVE; // validation requires > 0
        cfg.train.epochs = 1;
        cfg.train.batch_size = 64; // one step per epoch
        let source = tiny_source(&cfg, 0);
        let mut state = ModelState::new(&cfg.model, 32, DType::F32, 1).unwrap();
        // Trainable parameters only: batch-norm running buffers track batch
        // statistics regardless of the learning rate.
        let snapshot = |state: &ModelState| -> Vec<Vec<f32>> {
            state
                .named_vars()
                .iter()
                .map(|(_, v)| v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap())
                .collect()
        };
        let before = snapshot(&state);
        train(&source, None, &cfg, &mut state, TrainOptions::default()).unwrap();
        let after = snapshot(&state);
        for (a, b) in before.iter().zip(&after) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeded_runs_produce_identical_curves() {
        let cfg = tiny_config();
        let source = tiny_source(&cfg, 1);
        let mut s1 = ModelState::new(&cfg.model, 32, DType::F32, 7).unwrap();
        let c1 = train(&source, None, &cfg, &mut s1, TrainOptions::default()).unwrap();
        let mut s2 = ModelState::new(&cfg.model, 32, DType::F32, 7).unwrap();
        let c2 = train(&source, None, &cfg, &mut s2, TrainOptions::default()).unwrap();
        assert_eq!(c1.curves.len(), c2.curves.len());
        for (a, b) in c1.curves.iter().zip(&c2.curves) {
            assert_eq!(a.total.to_bits(), b.total.to_bits(), "step {}", a.step);
        }
    }

    #[test]
    fn pre_curriculum_gating_zeroes_rotation_and_separation() {
        let mut cfg = tiny_config();
        cfg.loss.curriculum_epoch = 100;
        let source = tiny_source(&cfg, 2);
        let mut state = ModelState::new(&cfg.model, 32, DType::F32, 0).unwrap();
        let out = train(&source, None, &cfg, &mut state, TrainOptions::default()).unwrap();
        for r in &out.curves {
            assert_eq!(r.rot, 0.0);
            assert_eq!(r.sep, 0.0);
            assert_eq!(r.total.to_bits(), r.recon.to_bits());
        }
    }

    #[test]
    fn rotation_step_is_additive_over_angles() {
        let cfg = tiny_config();
        let source = tiny_source(&cfg, 3);
        let state = ModelState::new(&cfg.model, 32, DType::F32, 5).unwrap();
        let pair = source.pair(0).unwrap();
        let refs =
            frames_to_tensor(&[&pair.reference], DType::F32, &candle_core::Device::Cpu).unwrap();
        let all = rotation_step(&state, &refs, &RotationAngle::ALL, RunMode::FROZEN).unwrap();
        let sum: f64 = RotationAngle::ALL
            .iter()
            .map(|&a| {
                scalar_f64(&rotation_step(&state, &refs, &[a], RunMode::FROZEN).unwrap()).unwrap()
            })
            .sum();
        let all_v = scalar_f64(&all).unwrap();
        assert!((all_v - sum).abs() < 1e-6 * sum.abs().max(1.0), "{all_v} vs {sum}");
    }

    #[test]
    fn checkpoint_resume_reproduces_curves() {
        let mut cfg = tiny_config();
        cfg.train.epochs = 4;
        cfg.train.checkpoint_every = 2;
        let source = tiny_source(&cfg, 4);
        let dir = tempfile::tempdir().unwrap();

        // Full run.
        let mut full = ModelState::new(&cfg.model, 32, DType::F32, 11).unwrap();
        let full_out = train(&source, None, &cfg, &mut full, TrainOptions::default()).unwrap();

        // Two epochs, checkpoint, then resume.
        let mut part_cfg = cfg.clone();
        part_cfg.train.epochs = 2;
        let mut part = ModelState::new(&cfg.model, 32, DType::F32, 11).unwrap();
        train(
            &source,
            None,
            &part_cfg,
            &mut part,
            TrainOptions {
                out_dir: Some(dir.path()),
                verbose: false,
                resume_optimizer: None,
            },
        )
        .unwrap();
        let loaded = crate::model::checkpoint::load_checkpoint(&dir.path().join("model.safetensors"))
            .unwrap();
        let optimizer = loaded
            .restore_optimizer(cfg.train.learning_rate)
            .unwrap()
            .expect("checkpoint carries optimizer moments");
        let mut resumed = loaded.state;
        let resumed_out = train(
            &source,
            None,
            &cfg,
            &mut resumed,
            TrainOptions {
                out_dir: None,
                verbose: false,
                resume_optimizer: Some(optimizer),
            },
        )
        .unwrap();

        let tail: Vec<_> = full_out
            .curves
            .iter()
            .filter(|r| r.epoch >= 2)
            .collect();
        assert_eq!(tail.len(), resumed_out.curves.len());
        for (a, b) in tail.iter().zip(&resumed_out.curves) {
            assert_eq!(
                a.total.to_bits(),
                b.total.to_bits(),
                "step {} vs {}: {} vs {}",
                a.step,
                b.step,
                a.total,
                b.total
            );
        }
    }

    #[test]
    fn semi_supervised_mode_requires_annotations() {
        let mut cfg = tiny_config();
        cfg.train.mode = crate::config::TrainMode::SemiSupervised;
        let source = tiny_source(&cfg, 5);
        let mut state = ModelState::new(&cfg.model, 32, DType::F32, 0).unwrap();
        assert!(train(&source, None, &cfg, &mut state, TrainOptions::default()).is_err());
    }

    #[test]
    fn semi_supervised_training_runs_and_records_losses() {
        let mut cfg = tiny_config();
        cfg.train.mode = crate::config::TrainMode::SemiSupervised;
        cfg.train.epochs = 1;
        let source = tiny_source(&cfg, 6);
        let ann: Vec<AnnotatedFrame> = (0..3)
            .map(|i| AnnotatedFrame {
                frame: source.frames()[i].clone(),
                points: vec![(0.3, 0.4), (0.6, 0.6)],
            })
            .collect();
        let sup = SupervisedSet {
            frames: ann,
            mapping: vec![(0, 0), (1, 1)],
        };
        let mut state = ModelState::new(&cfg.model, 32, DType::F32, 0).unwrap();
        let out = train(&source, Some(&sup), &cfg, &mut state, TrainOptions::default()).unwrap();
        // The supervised term makes the total exceed the reconstruction part.
        for r in &out.curves {
            assert!(r.total > r.recon);
        }
    }
}
