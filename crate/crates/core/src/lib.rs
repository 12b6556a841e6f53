//! Unified spherical camera model and the tools built on it.
//!
//! * [`camera`]: projection, back-projection, field-of-view and horizon
//!   conversions.
//! * [`warp`]: parallel inverse-mapping resampler and PNG I/O.
//! * [`dataset`]: labeled crops rendered from equirectangular panoramas.
//! * [`undistort`]: rectification to a pinhole image.
//! * [`horizon`]: horizon overlays and horizon-based retrieval.
//! * [`bins`]: classification bins, soft labels and the KL loss.
//! * [`perceptual`]: human-sensitivity surfaces for scoring errors.
//! * [`params`]: completing partial camera descriptions.
//!
//! Angles are radians throughout.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bins;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod horizon;
pub mod params;
pub mod perceptual;
pub mod undistort;
pub mod warp;

pub use camera::{Intrinsics, Orientation, PixelPoint, SpherePoint};
pub use error::{Error, Result};
pub use warp::Image;
