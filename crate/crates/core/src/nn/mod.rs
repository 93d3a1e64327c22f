//! Tensor building blocks shared by the network stages.

pub mod conv;
pub mod layers;
pub mod params;
pub mod resample;

pub use conv::conv2d;
pub use layers::{sigmoid, BatchNorm, Conv2d, Down, Mode, Up};
pub use params::ParamStore;
pub use resample::{area_downsample, upsample2x};
