//! Inharmonious region localization networks.
//!
//! A four-stage pipeline maps an RGB composite to a soft mask of the region
//! whose color or lighting disagrees with the rest of the image:
//!
//! 1. [`encoder`]: a five-stage residual trunk giving features `r_1..r_5`;
//! 2. [`fusion`]: bi-directional feature integration across the pyramid
//!    (`b_k`), or one of its ablation variants;
//! 3. [`attention`]: per-level channel and spatial attention (`a_k`, `A_k`);
//! 4. [`decoder`]: a global-context guided decoder producing `M̂`.
//!
//! [`losses`], [`metrics`], [`datagen`] and [`harness`] provide training,
//! evaluation, synthetic data and the ablation runner.

pub mod attention;
pub mod cli;
pub mod datagen;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod types;

pub use error::{Error, Result};
pub use model::{Model, ModelOutput};
pub use nn::Mode;
pub use types::{
    validate_pyramid, AttentionVariant, DecoderVariant, FeaturePyramid, FusionVariant, ImageMetrics, ImageTensor,
    MaskTensor, MetricReport, ModelConfig,
};
