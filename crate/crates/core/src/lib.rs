pub mod baseline;
pub mod bitstream;
pub mod color;
pub mod data;
pub mod distort;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
pub mod prior;
pub mod range_coder;
pub mod report;
pub mod weights;

pub use error::{Error, Result};
