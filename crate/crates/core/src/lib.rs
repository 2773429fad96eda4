pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod gaam;
pub mod gcafm;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod mask;
pub mod msrm;
pub mod pedm;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use mask::SegMask;
pub use tensor::{Shape, Tensor};
