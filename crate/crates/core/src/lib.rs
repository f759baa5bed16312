pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod histogram;
pub mod metrics;
pub mod networks;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
