//! Dual-branch interactive fusion attention U-Net for binary lesion
//! segmentation, with a self-contained tape-based autodiff core.
//!
//! The crate is generic over the scalar type (`f32` for training speed,
//! `f64` for oracle-grade numeric tests); concrete aliases live at the root.

pub mod biaf;
pub mod checkpoint;
pub mod data;
pub mod ddfd;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod params;
pub mod scalar;
pub mod schedule;
pub mod spectral;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision model.
pub type Model32 = network::Model<f32>;
/// Reference-precision model.
pub type Model64 = network::Model<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
pub type FeatureMap32 = spectral::FeatureMap<f32>;
pub type FeatureMap64 = spectral::FeatureMap<f64>;
pub type SamplePair32 = data::SamplePair<f32>;
pub type SamplePair64 = data::SamplePair<f64>;
