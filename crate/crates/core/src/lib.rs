//! Example-guided, style-consistent image synthesis: data, sampling, networks,
//! losses, training and evaluation.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod perceptual;
pub mod sampler;
pub mod trainer;

pub use candle_core::Device;
pub use config::TrainConfig;
pub use error::{Error, Result};
