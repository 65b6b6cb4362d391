//! Pose-guided sprite image generation with a dual-branch generator.
//!
//! The crate trains a Siamese generator on procedurally generated articulated
//! stick-figure sprites: one branch reconstructs the source image from its own
//! pose, the other re-renders the source identity in a target pose. A pose
//! transformer module bridges the branches with multi-head cross attention so
//! real source texture can flow into the transformed feature. Everything runs
//! on a small from-scratch f64 tensor engine with a define-by-run gradient
//! tape, checked against finite differences.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image_io;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
