//! Exact likelihood inference for integrated signal-plus-noise models
//! `dX_t = f(α,t)dt + σ(β,t)dW_t` observed on deterministic, possibly
//! irregular grids.

pub mod error;
pub mod estimate;
pub mod experiments;
pub mod increments;
pub mod information;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
