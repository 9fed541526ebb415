//! Differentiable multiplane-image reconstruction and novel view rendering.
//!
//! A scene is represented as a stack of fronto-parallel RGBσ planes in the
//! frustum of a reference camera. Novel views are produced by warping every
//! plane through its plane-induced homography and compositing front to back.
//! The [`optim`] module fits the planes (directly, or through a small
//! coordinate network) to posed training images by gradient descent.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod mpi;
pub mod optim;
pub mod scene;
pub mod scene_io;
pub mod synth;

pub use error::{Error, Result};
