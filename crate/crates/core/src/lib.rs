//! Training-data attribution for small denoising diffusion models.
//!
//! The crate trains a time-conditioned dense denoiser with SGD while logging
//! every per-sample `(timestep, noise seed, learning rate)` draw, then scores
//! training samples against test samples by replaying those gradients at
//! saved checkpoints (TracIn), optionally with per-gradient normalization
//! (ReTrac), guided partial normalization, or a LiSSA influence-function
//! baseline. The `bias` and `metrics` modules hold the timestep norm-bias
//! diagnostics and evaluation metrics.

pub mod attribution;
pub mod bias;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod lissa;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use data::{Dataset, SyntheticDatasetSpec};
pub use diffusion::{NoiseSchedule, SamplerConfig};
pub use error::{Error, Result};
pub use model::{Denoiser, DenoiserSpec};
pub use params::{GradientVector, ParameterVector};
pub use trainer::{Checkpoint, TrainConfig, TrainLog, TrainRecord};
