pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod ctc;
pub mod encoder;
pub mod error;
pub mod gradsuite;
pub mod mixing;
pub mod nn;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
