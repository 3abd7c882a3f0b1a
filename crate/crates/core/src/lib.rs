pub mod data;
pub mod downstream;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
