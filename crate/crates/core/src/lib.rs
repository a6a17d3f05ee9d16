pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decoding;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod objectives;
pub mod rewards;
pub mod rng;
pub mod seq;
pub mod trainer;
pub mod vse;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
