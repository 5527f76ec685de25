pub mod entropy;
pub mod codec;
pub mod error;
pub mod image;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod trainer;
pub mod transforms;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Param, TensorF};
