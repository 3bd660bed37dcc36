//! Learned point-cloud geometry compression.

mod bytes;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod partition;
pub mod synthetic;
pub mod tensor;
pub mod threshold;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor4D;
