//! Mask-guided matting with auxiliary supervision, desk scale.
//!
//! The crate covers the full loop: synthesizing composites and guidance masks,
//! generating background-line pseudo ground truth by homography-adapted line
//! detection, a small reverse-mode autodiff engine with a differentiable
//! offset warp, a toy multi-head encoder-decoder trained with the four-task
//! loss, and the standard matting evaluation metrics.

pub mod autodiff;
pub mod cli;
pub mod compose;
pub mod distfield;
pub mod error;
pub mod geometry;
pub mod image;
pub mod imageops;
pub mod io;
pub mod lsd;
pub mod metrics;
pub mod net;
pub mod pseudogt;
pub mod seeds;
