//! Controllable conditional diffusion for multimodal vehicle trajectory
//! prediction.
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI and
//! parallel evaluation live in the `cdt` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod ndiff;
pub mod scene;

pub use error::{Error, Result};
pub use model::{EpsHead, Model, ModelConfig, Variant};
