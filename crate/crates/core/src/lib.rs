pub mod booster;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod metric;
pub mod rng;
pub mod smoothing;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
