//! Complete a partial camera description.
//!
//! Any two of focal length, horizontal field of view and `xi` determine
//! the third for a given image width; pitch and horizon midpoint determine
//! each other once the height is known.

use serde::Serialize;

use crate::camera::{
    effective_hfov, focal_from_fov, horizon_midpoint, pitch_from_midpoint, xi_from_fov_focal, Intrinsics,
    Orientation,
};
use crate::error::{Error, Result};

/// Known quantities; angles in radians.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamQuery {
    pub width: f64,
    pub height: Option<f64>,
    pub focal_px: Option<f64>,
    pub hfov_rad: Option<f64>,
    pub xi: Option<f64>,
    pub pitch_rad: Option<f64>,
    pub midpoint_units: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resolved {
    pub width: f64,
    pub height: Option<f64>,
    pub focal_px: f64,
    pub hfov_rad: f64,
    pub xi: f64,
    pub pitch_rad: Option<f64>,
    pub midpoint_units: Option<f64>,
}

pub fn resolve(q: &ParamQuery) -> Result<Resolved> {
    if !(q.width.is_finite() && q.width > 0.0) {
        return Err(Error::InvalidArgument(format!("width {} must be positive", q.width)));
    }
    let u0 = q.width / 2.0;
    let (focal_px, hfov_rad, xi) = match (q.focal_px, q.hfov_rad, q.xi) {
        (Some(f), None, Some(xi)) => {
            let intr = Intrinsics::new(f, xi, q.width, q.height.unwrap_or(q.width))?;
            (f, effective_hfov(&intr), xi)
        }
        (None, Some(h), Some(xi)) => {
            if !(0.0..=1.0).contains(&xi) {
                return Err(Error::OutOfModelRange(xi));
            }
            (focal_from_fov(h, xi, u0)?, h, xi)
        }
        (Some(f), Some(h), None) => {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvalidArgument(format!("focal length {f} must be positive")));
            }
            if !(h > 0.0 && h < std::f64::consts::PI) {
                return Err(Error::InvalidFov(h));
            }
            (f, h, xi_from_fov_focal(h, f, u0)?)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "give exactly two of focal length, field of view and xi".into(),
            ))
        }
    };
    let (pitch_rad, midpoint_units) = match (q.pitch_rad, q.midpoint_units) {
        (None, None) => (None, None),
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument("give either pitch or midpoint, not both".into()))
        }
        (pitch, midpoint) => {
            let height = q
                .height
                .ok_or_else(|| Error::InvalidArgument("pitch and midpoint conversions need the image height".into()))?;
            let intr = Intrinsics::new(focal_px, xi, q.width, height)?;
            match (pitch, midpoint) {
                (Some(p), _) => (Some(p), Some(horizon_midpoint(Orientation::new(p, 0.0), &intr)?)),
                (_, Some(m)) => (Some(pitch_from_midpoint(m, &intr)?), Some(m)),
                _ => unreachable!("handled above"),
            }
        }
    };
    Ok(Resolved {
        width: q.width,
        height: q.height,
        focal_px,
        hfov_rad,
        xi,
        pitch_rad,
        midpoint_units,
    })
}
