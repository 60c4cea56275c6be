//! Unsupervised porosity segmentation for layer-wise XCT images.
//!
//! The pipeline:
//!
//! 1. [`threshold::make_reference_mask`] builds a noisy pore mask per image
//!    from three-level intensity clustering.
//! 2. [`cluster`] groups layer images and turns each cluster centroid into a
//!    pool of candidate prompt pixels.
//! 3. [`prompt`] samples prompt points from a pool.
//! 4. [`backend`] runs a promptable segmentation model and picks one of its
//!    three candidate masks.
//! 5. [`eval`] scores masks and bootstraps prompt sensitivity.
//!
//! [`synth`] generates disc images with known pores for testing.

pub mod backend;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod image;
pub mod prompt;
pub mod synth;
pub mod threshold;

pub use error::{Error, Result};
pub use image::{BinaryMask, GrayImage};
