pub mod autodiff;
pub mod cells;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
