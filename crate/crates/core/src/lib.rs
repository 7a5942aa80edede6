//! Core of the multi-edge offloading simulator: the physical and economic
//! model, cellular traffic handling, slice provisioning by LP relaxation and
//! randomized rounding, and the per-region offloading environment.

pub mod env;
pub mod error;
pub mod model;
pub mod scenario;
pub mod slicer;
pub mod traffic;

pub use error::{Error, Result};
