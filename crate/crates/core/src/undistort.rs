//! Rectify a distorted image into a pinhole image.
//!
//! Every target pixel is cast as a pinhole ray, projected through the
//! spherical model of the source and sampled bilinearly. Rays that land
//! outside the source are left black.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{project, Intrinsics};
use crate::error::{Error, Result};
use crate::warp::{remap, BorderMode, Image};

/// Lens of the pinhole target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLens {
    FocalPx(f64),
    /// Horizontal field of view in radians, below pi.
    HfovRad(f64),
}

/// Size and lens of the rectified image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub width: u32,
    pub height: u32,
    pub lens: TargetLens,
}

impl TargetSpec {
    /// Pinhole intrinsics of the target, centered.
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidTarget(format!(
                "size {}x{} is empty",
                self.width, self.height
            )));
        }
        let u0 = self.width as f64 / 2.0;
        let focal = match self.lens {
            TargetLens::FocalPx(f) if f.is_finite() && f > 0.0 => f,
            TargetLens::FocalPx(f) => {
                return Err(Error::InvalidTarget(format!("focal length {f} must be positive")))
            }
            TargetLens::HfovRad(h) if h > 0.0 && h < PI => u0 / (h / 2.0).tan(),
            TargetLens::HfovRad(h) => {
                return Err(Error::InvalidTarget(format!(
                    "field of view {h} rad must lie in (0, pi)"
                )))
            }
        };
        Intrinsics::new(focal, 0.0, self.width as f64, self.height as f64)
            .map_err(|e| Error::InvalidTarget(e.to_string()))
    }
}

/// Same size as the source, with the focal length that keeps the scale of
/// the center pixel: near the optical axis the spherical model images a
/// unit tangent as `f / (1 + xi)` pixels.
pub fn default_target(intr: &Intrinsics) -> TargetSpec {
    TargetSpec {
        width: intr.width().round().max(1.0) as u32,
        height: intr.height().round().max(1.0) as u32,
        lens: TargetLens::FocalPx(intr.focal_px() / (1.0 + intr.xi())),
    }
}

/// Source coordinate seen by a target pixel center, if it lies in the
/// source image.
pub fn undistort_map(
    intr: &Intrinsics,
    target: &Intrinsics,
) -> impl Fn(f64, f64) -> Option<(f64, f64)> + Sync + use<> {
    let (intr, target) = (*intr, *target);
    let (tu0, tv0) = target.principal_point();
    let tf = target.focal_px();
    let (w, h) = (intr.width(), intr.height());
    move |x, y| {
        let ray = Vector3::new((x - tu0) / tf, (y - tv0) / tf, 1.0);
        let p = project(ray, &intr).ok()?;
        ((0.0..=w).contains(&p.u) && (0.0..=h).contains(&p.v)).then_some((p.u, p.v))
    }
}

/// Rectify `src`, whose lens is described by `intr`, into `target`.
///
/// `intr` must describe the raster of `src` (same size to within a
/// pixel).
pub fn undistort(src: &Image, intr: &Intrinsics, target: &TargetSpec) -> Result<Image> {
    let target_intr = target.intrinsics()?;
    if (intr.width() - src.width() as f64).abs() > 1.0 || (intr.height() - src.height() as f64).abs() > 1.0 {
        return Err(Error::InvalidIntrinsics(format!(
            "intrinsics describe a {}x{} image, source is {}x{}",
            intr.width(),
            intr.height(),
            src.width(),
            src.height()
        )));
    }
    let map = undistort_map(intr, &target_intr);
    Ok(remap(
        src,
        target.width as usize,
        target.height as usize,
        &map,
        BorderMode::Clamp,
    ))
}
