//! Runtime configuration shared by every command.
//!
//! One TOML file configures all stages; keys are namespaced per module
//! (`data.*`, `target.*`, `model.*`, `loss.*`, `train.*`, `classifier.*`).
//! Precedence is: command-line flag > config file > built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub target: TargetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of image files or an animated GIF.
    pub source: Option<PathBuf>,
    /// Frame gap between the reference and the future frame of a pair.
    pub gap: usize,
    /// Step between the reference indices of consecutive pairs.
    pub stride: usize,
    /// Square training resolution; frames are resized on load.
    pub resolution: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: None,
            gap: 6,
            stride: 13,
            resolution: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Ssim,
    AbsDiff,
    RawDiff,
    /// Reconstruct the future frame itself; the ablation baseline.
    Image,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Ssim => "ssim",
            TargetKind::AbsDiff => "abs_diff",
            TargetKind::RawDiff => "raw_diff",
            TargetKind::Image => "image",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssim" => Ok(TargetKind::Ssim),
            "abs_diff" => Ok(TargetKind::AbsDiff),
            "raw_diff" => Ok(TargetKind::RawDiff),
            "image" => Ok(TargetKind::Image),
            other => Err(Error::config(
                "target.kind",
                format!("unknown target kind `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub ssim: SsimConfig,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            kind: TargetKind::Ssim,
            ssim: SsimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    /// Sliding window side; odd, at least 3.
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        // Standard constants for unit dynamic range: (0.01)^2 and (0.03)^2.
        Self {
            window: 11,
            c1: 1e-4,
            c2: 9e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of discovered keypoints.
    pub k: usize,
    /// Std of the rendered Gaussian maps, in normalized coordinates.
    pub sigma: f64,
    /// Use only the future frame's geometry in the reconstruction decoder.
    pub single_branch: bool,
    /// Residual blocks per encoder stage. `[3, 4, 6, 3]` is the 50-layer
    /// network; shorter/narrower settings exist for CPU-scale runs.
    pub encoder_blocks: Vec<usize>,
    /// Channel width of the first encoder stage (64 gives 2048 output
    /// channels after the 4x bottleneck expansion of the last stage).
    pub encoder_width: usize,
    /// Heatmap resolution is input resolution divided by this factor.
    pub heatmap_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 10,
            sigma: 0.05,
            single_branch: false,
            encoder_blocks: vec![3, 4, 6, 3],
            encoder_width: 64,
            heatmap_stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the rotation equivariance term.
    pub w_r: f64,
    /// Weight of the separation term.
    pub w_s: f64,
    /// Length scale of the separation term, in normalized coordinates.
    pub sigma_s: f64,
    /// Rotation and separation terms activate strictly after this epoch.
    pub curriculum_epoch: usize,
    /// Number of tapped feature blocks in the perceptual extractor (1..=4).
    pub perceptual_blocks: usize,
    /// Channel width of the first perceptual block.
    pub perceptual_width: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_r: 1.0,
            w_s: 0.02,
            sigma_s: 0.05,
            curriculum_epoch: 5,
            perceptual_blocks: 4,
            perceptual_width: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    SelfSupervised,
    SemiSupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hard cap on epochs; convergence may stop earlier.
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Emit a checkpoint every this many epochs (and at the end).
    pub checkpoint_every: usize,
    /// Stop when smoothed reconstruction loss improves by less than
    /// `convergence_tol` over this many epochs.
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
            mode: TrainMode::SelfSupervised,
            checkpoint_every: 5,
            convergence_window: 5,
            convergence_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Temporal context length in frames (window of the conv net).
    pub window: usize,
    /// Sampling gap between frames inside the window (1 for fast behaviors).
    pub frame_gap: usize,
    pub channels: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Independent training runs used to report a bootstrap std of MAP.
    pub runs: usize,
    /// Fraction of frames used for training when no explicit split is given.
    pub train_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            window: 13,
            frame_gap: 2,
            channels: 64,
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            runs: 3,
            train_fraction: 0.7,
        }
    }
}

impl Config {
    /// Parse a TOML string; missing keys fall back to defaults, unknown keys
    /// are rejected so typos surface as errors naming the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| Error::config("<config>", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| {
            Error::config(path.display().to_string(), e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.gap < 1 {
            return Err(Error::config("data.gap", "must be at least 1"));
        }
        if self.data.stride < 1 {
            return Err(Error::config("data.stride", "must be at least 1"));
        }
        if self.data.resolution == 0 {
            return Err(Error::config("data.resolution", "must be positive"));
        }
        if self.target.ssim.window < 3 || self.target.ssim.window % 2 == 0 {
            return Err(Error::config("target.ssim.window", "must be odd and >= 3"));
        }
        if self.model.k == 0 {
            return Err(Error::config("model.k", "must be at least 1"));
        }
        if self.model.sigma <= 0.0 {
            return Err(Error::config("model.sigma", "must be positive"));
        }
        if self.model.encoder_blocks.len() != 4 {
            return Err(Error::config(
                "model.encoder_blocks",
                "expected 4 stage block counts",
            ));
        }
        if self.model.heatmap_stride == 0
            || !self.model.heatmap_stride.is_power_of_two()
            || self.model.heatmap_stride > 32
        {
            return Err(Error::config(
                "model.heatmap_stride",
                "must be a power of two in 1..=32",
            ));
        }
        if self.loss.w_r < 0.0 || self.loss.w_s < 0.0 {
            return Err(Error::config("loss.w_r/loss.w_s", "must be non-negative"));
        }
        if self.loss.sigma_s <= 0.0 {
            return Err(Error::config("loss.sigma_s", "must be positive"));
        }
        if self.loss.perceptual_blocks == 0 || self.loss.perceptual_blocks > 4 {
            return Err(Error::config("loss.perceptual_blocks", "must be in 1..=4"));
        }
        if self.train.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.train.learning_rate <= 0.0 {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.classifier.train_fraction) {
            return Err(Error::config(
                "classifier.train_fraction",
                "must be in (0, 1)",
            ));
        }
        Ok(())
    }
}
