//! Coupled dictionary learning and joint sparse coding for guided
//! multimodal image super-resolution.
//!
//! A low-resolution image of one modality is super-resolved with the help
//! of a registered high-resolution image of another modality. Patches of
//! both are coded jointly over six coupled dictionaries that separate
//! structure common to both modalities from structure unique to each.

pub mod container;
pub mod error;
pub mod imaging;
pub mod learning;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sparse;
pub mod sr;
pub mod synth;

pub use error::{Error, Result};
