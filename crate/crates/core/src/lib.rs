//! Granularity-bias scoring and margin-contrastive training primitives.
//!
//! The crate is `no_std` (with `alloc`); transcendental math goes through
//! `libm` so results are bit-identical across platforms.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod bias;
pub mod corpus;
pub mod diagnostics;
pub mod encoders;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
