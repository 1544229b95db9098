pub mod error;
pub mod fourier;
pub mod hedging;
pub mod kernels;
pub mod levy;
pub mod market;
pub mod mc;
pub mod quad;
pub mod stats;

pub use error::{Error, Result};
