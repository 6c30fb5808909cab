//! Multi-layer residual sparsifying transforms (MARS).
//!
//! The crate covers the two stages of the method:
//!
//! * **learning** a stack of unitary patch transforms where every layer
//!   sparsifies the transform-domain residual left over by the layer before
//!   it ([`model`]), using exact block coordinate descent;
//! * **reconstruction** of low-dose CT images by penalized weighted least
//!   squares with the learned stack as regularizer ([`recon`]), solved by a
//!   relaxed linearized augmented Lagrangian image update alternated with
//!   closed-form sparse coding.
//!
//! Around those sit a desk-scale parallel-beam tomography simulator
//! ([`ctsim`]), patch operators ([`patch`]), image quality metrics
//! ([`metrics`]), on-disk formats ([`io`]) and the run configuration
//! ([`config`]).
//!
//! Conventions used everywhere:
//! * images are row-major, values in modified HU (air = 0, water = 1000);
//! * patches are vectorized row-major and ordered by their top-left corner in
//!   raster order; only patches fully inside the image are used;
//! * all arithmetic is `f64`.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod ctsim;
pub mod demo;
pub mod error;
pub mod image;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod patch;
pub mod recon;

pub use error::{MarsError, Result};
pub use image::ImageGrid;
pub use model::{CodeResidualState, TrainConfig, TransformStack};
pub use patch::PatchGeometry;
