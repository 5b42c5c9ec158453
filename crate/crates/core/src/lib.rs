pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
