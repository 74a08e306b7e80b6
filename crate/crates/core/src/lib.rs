//! MCNet: a mirror-complementary two-stream network for RGB-thermal salient
//! object detection, with its training pipeline and evaluation suite.
//!
//! The network is generic over the scalar type; [`McNet32`] and [`McNet64`]
//! fix it to `f32` and `f64`.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fusion;
pub mod imageio;
pub mod interaction;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;

pub use backbone::{Backbone, BackboneConfig, FeaturePyramid};
pub use error::{McError, Result};
pub use interaction::AttentionVariant;
pub use labels::{decouple, DecoupledLabels};
pub use metrics::MetricsReport;
pub use model::{Knobs, McNet, ModelConfig, SaliencyOutput};

pub type McNet32 = McNet<f32>;
pub type McNet64 = McNet<f64>;
