//! Self-supervised keypoint discovery from motion in behavioral video.
//!
//! The toolkit trains an encoder / geometry-bottleneck / decoder network to
//! reconstruct the spatiotemporal difference between frame pairs, extracts
//! per-keypoint heatmap features, and feeds the resulting tracks into
//! behavior classification, pose regression, pulse detection, and wind-speed
//! estimation.

pub mod behavior;
pub mod config;
pub mod data;
pub mod difftarget;
pub mod error;
pub mod model;
pub mod evalkit;
pub mod heatfeat;
pub mod objectives;
pub mod tracks;
pub mod trainer;
pub mod tensorutil;
pub mod util;

pub use config::{Config, TargetKind};
pub use error::{Error, Result};
