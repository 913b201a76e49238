//! Reconstruction-scored point cloud downsampling.
//!
//! Points are ranked by how badly a small network reconstructs them from
//! their surroundings: a point predicted poorly from its neighbours carries
//! information its neighbours do not, and a patch that cannot be rebuilt
//! from half of its points marks the removed half as structurally important.
//! The crate bundles the spatial primitives, a reverse-mode tensor engine,
//! the scoring pipeline, an attention-based feature extractor, training code
//! and a small evaluation harness against classical samplers.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod glfa;
pub mod io;
pub mod scoring;
pub mod tasks;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
