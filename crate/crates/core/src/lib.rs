//! Prior-knowledge prompt augmentation and evaluation tooling for adaptive
//! radiotherapy segmentation.
//!
//! The crate covers the pieces around a promptable segmenter: volume I/O,
//! box and mask prompts and their augmentation, the three-channel
//! prior-context input, a rigid-registration propagation baseline, the
//! Dice / NSD / HD95 / ASD metric suite, a subprocess protocol for external
//! segmenters, a synthetic phantom generator and the experiment harness.

pub mod bbox;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod morphology;
pub mod nifti;
pub mod phantom;
pub mod prompt;
pub mod registration;
pub mod rng;
pub mod segmenter;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Geometry, Volume};
