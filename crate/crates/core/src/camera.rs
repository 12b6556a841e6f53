//! Unified spherical camera model.
//!
//! A camera-frame point is first normalized onto the unit sphere and then
//! projected through a center offset by `xi` along the optical axis. `xi = 0`
//! is the pinhole camera; larger values bend straight lines into conics.
//!
//! Conventions used throughout the crate:
//!
//! * camera frame is right handed with x right, y down, z forward;
//! * pixel coordinates are continuous with pixel `i` covering `[i, i + 1)`,
//!   so the centered principal point `(w/2, h/2)` is the image center;
//! * the world zero-elevation plane is `y = 0` and `R = Rz(roll) * Rx(pitch)`
//!   maps world directions into the camera frame;
//! * normalized vertical units put the top of the image at `+1` and the
//!   bottom at `-1`. A positive pitch moves the horizon towards the top.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Upper bound on roots/limits treated as numerically zero.
const TINY: f64 = 1e-12;

/// Slack accepted on `xi` produced by closed-form conversions before it is
/// reported as out of range.
const XI_SLACK: f64 = 1e-12;

/// Intrinsic parameters: focal length and distortion plus the image frame.
///
/// Image dimensions are kept as reals so that rescaling stays exact; callers
/// round at raster boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    focal_px: f64,
    xi: f64,
    principal_point: (f64, f64),
    image_size: (f64, f64),
}

impl Intrinsics {
    /// Intrinsics with the principal point at the image center.
    pub fn new(focal_px: f64, xi: f64, width: f64, height: f64) -> Result<Self> {
        Self::with_principal_point(focal_px, xi, width, height, (width / 2.0, height / 2.0))
    }

    pub fn with_principal_point(
        focal_px: f64,
        xi: f64,
        width: f64,
        height: f64,
        principal_point: (f64, f64),
    ) -> Result<Self> {
        if !(focal_px.is_finite() && focal_px > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal length must be positive, got {focal_px}"
            )));
        }
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::InvalidIntrinsics(format!(
                "xi must lie in [0, 1], got {xi}"
            )));
        }
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(principal_point.0.is_finite() && principal_point.1.is_finite()) {
            return Err(Error::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(Intrinsics {
            focal_px,
            xi,
            principal_point,
            image_size: (width, height),
        })
    }

    /// Intrinsics whose focal length produces `hfov_rad` across `width`.
    pub fn from_hfov(hfov_rad: f64, xi: f64, width: f64, height: f64) -> Result<Self> {
        let focal = focal_from_fov(hfov_rad, xi, width / 2.0)?;
        Self::new(focal, xi, width, height)
    }

    pub fn focal_px(&self) -> f64 {
        self.focal_px
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn principal_point(&self) -> (f64, f64) {
        self.principal_point
    }

    pub fn width(&self) -> f64 {
        self.image_size.0
    }

    pub fn height(&self) -> f64 {
        self.image_size.1
    }

    /// Convert a pixel-space `v` into normalized vertical units.
    pub fn v_to_units(&self, v: f64) -> f64 {
        2.0 * (self.principal_point.1 - v) / self.image_size.1
    }

    /// Convert normalized vertical units back into a pixel-space `v`.
    pub fn units_to_v(&self, units: f64) -> f64 {
        self.principal_point.1 - units * self.image_size.1 / 2.0
    }
}

/// Camera pitch and roll. Yaw and translation are fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Orientation {
    pub pitch_rad: f64,
    pub roll_rad: f64,
}

impl Orientation {
    pub fn new(pitch_rad: f64, roll_rad: f64) -> Self {
        Orientation {
            pitch_rad,
            roll_rad,
        }
    }

    pub fn level() -> Self {
        Self::default()
    }
}

/// Direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint(Vector3<f64>);

impl SpherePoint {
    /// Normalizes `v`; returns `None` for the zero vector.
    pub fn from_vector(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        (n > 0.0 && n.is_finite()).then(|| SpherePoint(v / n))
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }
}

/// Horizon parameterized by its midpoint (normalized units) and roll.
///
/// Geometrically this is the line at signed distance `midpoint` from the
/// principal point, rotated by `roll` about it. For pinhole cameras it
/// coincides with the imaged horizon; with `xi > 0` the imaged horizon is a
/// curve (see [`horizon_curve`]) and this is only its parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonLine {
    pub midpoint_units: f64,
    pub roll_rad: f64,
}

impl HorizonLine {
    pub fn new(orient: Orientation, intr: &Intrinsics) -> Result<Self> {
        Ok(HorizonLine {
            midpoint_units: horizon_midpoint(orient, intr)?,
            roll_rad: orient.roll_rad,
        })
    }

    /// Pixel `v` of the line at column `u`.
    pub fn v_at(&self, u: f64, intr: &Intrinsics) -> f64 {
        let (u0, v0) = intr.principal_point();
        let offset = self.midpoint_units * intr.height() / 2.0;
        v0 - offset / self.roll_rad.cos() + self.roll_rad.tan() * (u - u0)
    }

    /// `v` at the left and right image boundaries in normalized units.
    pub fn endpoints_units(&self, intr: &Intrinsics) -> (f64, f64) {
        (
            intr.v_to_units(self.v_at(0.0, intr)),
            intr.v_to_units(self.v_at(intr.width(), intr)),
        )
    }
}

/// `Rz(roll) * Rx(pitch)`.
pub fn rotation_matrix(orient: Orientation) -> Matrix3<f64> {
    let (st, ct) = orient.pitch_rad.sin_cos();
    let (sp, cp) = orient.roll_rad.sin_cos();
    let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ct, -st, 0.0, st, ct);
    rz * rx
}

/// Rotation about the vertical (y) axis, used for panorama azimuth.
pub fn yaw_matrix(yaw_rad: f64) -> Matrix3<f64> {
    let (s, c) = yaw_rad.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Project a camera-frame point to pixels.
pub fn project(p_cam: Vector3<f64>, intr: &Intrinsics) -> Result<PixelPoint> {
    let alpha = p_cam.norm();
    let denominator = intr.xi * alpha + p_cam.z;
    if !(alpha > 0.0) || denominator <= 1e-9 * alpha {
        return Err(Error::DegenerateProjection { denominator });
    }
    let (u0, v0) = intr.principal_point;
    Ok(PixelPoint {
        u: p_cam.x * intr.focal_px / denominator + u0,
        v: p_cam.y * intr.focal_px / denominator + v0,
    })
}

/// Back-project a pixel onto the unit sphere.
pub fn backproject(p: PixelPoint, intr: &Intrinsics) -> SpherePoint {
    let (u0, v0) = intr.principal_point;
    let x = (p.u - u0) / intr.focal_px;
    let y = (p.v - v0) / intr.focal_px;
    SpherePoint(backproject_normalized(x, y, intr.xi))
}

/// Lift K-normalized image coordinates to the sphere.
#[inline]
pub(crate) fn backproject_normalized(x: f64, y: f64, xi: f64) -> Vector3<f64> {
    let r2 = x * x + y * y;
    let omega = (xi + (1.0 + (1.0 - xi * xi) * r2).sqrt()) / (r2 + 1.0);
    let v = Vector3::new(omega * x, omega * y, omega - xi);
    // omega is exact on paper; renormalizing removes the last few ulps.
    v / v.norm()
}

/// Effective horizontal field of view across the full image width.
///
/// Evaluated through the half-angle cosine split into `1 - c` and `1 + c`
/// terms that are both free of cancellation, so narrow and very wide fields
/// stay accurate.
pub fn effective_hfov(intr: &Intrinsics) -> f64 {
    hfov_for(intr.focal_px, intr.xi, intr.principal_point.0)
}

pub(crate) fn hfov_for(focal_px: f64, xi: f64, u0: f64) -> f64 {
    let x2 = (u0 / focal_px).powi(2);
    let s = (1.0 + (1.0 - xi * xi) * x2).sqrt();
    let one_minus = (1.0 + xi).powi(2) * x2 / (1.0 + (1.0 + xi) * x2 + s);
    let one_plus = (1.0 + (1.0 - xi) * x2 + s) / (1.0 + x2);
    let cos_half = 0.5 * (one_plus - one_minus);
    let sin_half = (one_minus * one_plus).sqrt();
    2.0 * sin_half.atan2(cos_half)
}

/// Focal length (pixels) producing `hfov` for a given `xi` and half width `u0`.
pub fn focal_from_fov(hfov: f64, xi: f64, u0: f64) -> Result<f64> {
    if !(hfov > 0.0 && hfov < PI) {
        return Err(Error::InvalidFov(hfov));
    }
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::OutOfModelRange(xi));
    }
    if !(u0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "principal point offset must be positive, got {u0}"
        )));
    }
    let (sin_half, cos_half) = (hfov / 2.0).sin_cos();
    Ok(u0 * (xi + cos_half) / sin_half)
}

/// Distortion producing `hfov` for a given focal length and half width `u0`.
pub fn xi_from_fov_focal(hfov: f64, focal_px: f64, u0: f64) -> Result<f64> {
    if !(hfov > 0.0 && hfov < PI) {
        return Err(Error::InvalidFov(hfov));
    }
    if !(focal_px > 0.0 && u0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "focal length and u0 must be positive, got f={focal_px}, u0={u0}"
        )));
    }
    let (sin_half, cos_half) = (hfov / 2.0).sin_cos();
    let xi = (focal_px * sin_half - u0 * cos_half) / u0;
    if !(-XI_SLACK..=1.0 + XI_SLACK).contains(&xi) {
        return Err(Error::OutOfModelRange(xi));
    }
    Ok(xi.clamp(0.0, 1.0))
}

/// Horizon midpoint in normalized units. Roll does not enter.
pub fn horizon_midpoint(orient: Orientation, intr: &Intrinsics) -> Result<f64> {
    let (s, c) = orient.pitch_rad.sin_cos();
    let denom = intr.xi + c;
    if denom.abs() < TINY {
        return Err(Error::HorizonAtInfinity(denom));
    }
    Ok(2.0 * intr.focal_px * s / (intr.height() * denom))
}

/// Pixel row where the horizon crosses the vertical through the principal
/// point, ignoring roll.
pub fn horizon_midpoint_px(orient: Orientation, intr: &Intrinsics) -> Result<f64> {
    Ok(intr.units_to_v(horizon_midpoint(orient, intr)?))
}

/// Invert [`horizon_midpoint`] for pitch.
///
/// With `t = tan(pitch / 2)` and `k = midpoint * h / (2 f)` the midpoint
/// equation becomes `k(1 - xi) t^2 + 2t - k(1 + xi) = 0`.
pub fn pitch_from_midpoint(midpoint_units: f64, intr: &Intrinsics) -> Result<f64> {
    if !midpoint_units.is_finite() {
        return Err(Error::NoValidPitch(midpoint_units));
    }
    let xi = intr.xi;
    let k = midpoint_units * intr.height() / (2.0 * intr.focal_px);
    let a = k * (1.0 - xi);
    let disc = 1.0 + k * k * (1.0 - xi * xi);

    let mut roots = Vec::with_capacity(2);
    // Cancellation-free form of (-1 + sqrt(disc)) / a; also covers a == 0.
    roots.push(k * (1.0 + xi) / (1.0 + disc.sqrt()));
    if a.abs() > TINY {
        roots.push((-1.0 - disc.sqrt()) / a);
    }

    roots
        .into_iter()
        .map(|t| 2.0 * t.atan())
        .filter(|theta| theta.abs() < FRAC_PI_2)
        .min_by(|x, y| x.abs().total_cmp(&y.abs()))
        .ok_or(Error::NoValidPitch(midpoint_units))
}

/// Intrinsics of the same camera after scaling the image down by `s`.
pub fn rescale_intrinsics(intr: &Intrinsics, s: f64) -> Result<Intrinsics> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {s}"
        )));
    }
    Intrinsics::with_principal_point(
        intr.focal_px / s,
        intr.xi,
        intr.image_size.0 / s,
        intr.image_size.1 / s,
        (intr.principal_point.0 / s, intr.principal_point.1 / s),
    )
}

/// Azimuth of horizon sample `i` out of `n`, ascending from just past `-pi`.
fn horizon_azimuth(i: usize, n: usize) -> f64 {
    -PI + (i as f64 + 0.5) * 2.0 * PI / n as f64
}

fn horizon_point(rot: &Matrix3<f64>, azimuth: f64, intr: &Intrinsics) -> Result<PixelPoint> {
    let (s, c) = azimuth.sin_cos();
    project(rot * Vector3::new(s, 0.0, c), intr)
}

/// Image of the world horizon as a polyline ordered by azimuth.
///
/// Directions that fail to project (behind the projection center) are
/// dropped.
pub fn horizon_curve(
    orient: Orientation,
    intr: &Intrinsics,
    n_samples: usize,
) -> Result<Vec<PixelPoint>> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "horizon_curve needs at least 2 samples, got {n_samples}"
        )));
    }
    let rot = rotation_matrix(orient);
    let points: Vec<_> = (0..n_samples)
        .filter_map(|i| horizon_point(&rot, horizon_azimuth(i, n_samples), intr).ok())
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyHorizon);
    }
    Ok(points)
}

const ENDPOINT_SAMPLES: usize = 2048;

/// Horizon `v` (normalized units) at the left (`u = 0`) and right
/// (`u = width`) image boundaries.
///
/// The curve is walked outward in both directions from the forward
/// horizon direction and the crossing reached first is refined by
/// bisection on azimuth. When a walk ends (the curve leaves the domain of
/// the projection) before reaching a boundary, its end tangent is
/// extrapolated; this is approximate for extreme `xi`.
pub fn horizon_endpoints(orient: Orientation, intr: &Intrinsics) -> Result<(f64, f64)> {
    let rot = rotation_matrix(orient);
    if horizon_point(&rot, 0.0, intr).is_err() {
        return Err(Error::NoIntersection("left"));
    }
    let left = boundary_crossing(&rot, intr, 0.0).ok_or(Error::NoIntersection("left"))?;
    let right = boundary_crossing(&rot, intr, intr.width()).ok_or(Error::NoIntersection("right"))?;
    Ok((intr.v_to_units(left), intr.v_to_units(right)))
}

enum Crossing {
    Exact(usize, f64),
    Extrapolated(f64),
}

fn boundary_crossing(rot: &Matrix3<f64>, intr: &Intrinsics, target_u: f64) -> Option<f64> {
    let walks = [1.0, -1.0].map(|dir| walk_to_boundary(rot, intr, target_u, dir));
    let exact = walks
        .iter()
        .filter_map(|w| match w {
            Some(Crossing::Exact(steps, v)) => Some((*steps, *v)),
            _ => None,
        })
        .min_by_key(|&(steps, _)| steps);
    if let Some((_, v)) = exact {
        return Some(v);
    }
    walks.into_iter().find_map(|w| match w {
        Some(Crossing::Extrapolated(v)) => Some(v),
        _ => None,
    })
}

/// Follow the horizon from azimuth 0 in direction `dir` for at most a full
/// turn, stopping at the first crossing of `u = target_u`.
fn walk_to_boundary(rot: &Matrix3<f64>, intr: &Intrinsics, target_u: f64, dir: f64) -> Option<Crossing> {
    let step = 2.0 * PI / ENDPOINT_SAMPLES as f64;
    let azimuth = |k: usize| dir * (k as f64 - 0.5) * step;
    let mut prev = horizon_point(rot, azimuth(0), intr).ok()?;
    let mut before_prev = None;
    for k in 1..=ENDPOINT_SAMPLES {
        let Ok(p) = horizon_point(rot, azimuth(k), intr) else {
            return before_prev.and_then(|inner| extrapolate(prev, inner, target_u).map(Crossing::Extrapolated));
        };
        let (d0, d1) = (prev.u - target_u, p.u - target_u);
        if d0 == 0.0 {
            return Some(Crossing::Exact(k, prev.v));
        }
        if d0.signum() != d1.signum() {
            return Some(Crossing::Exact(
                k,
                bisect_crossing(rot, intr, target_u, azimuth(k - 1), azimuth(k), d0),
            ));
        }
        before_prev = Some(prev);
        prev = p;
    }
    None
}

fn bisect_crossing(
    rot: &Matrix3<f64>,
    intr: &Intrinsics,
    target_u: f64,
    mut lo: f64,
    mut hi: f64,
    d_lo: f64,
) -> f64 {
    let sign_lo = d_lo.signum();
    let mut best = None;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let Ok(p) = horizon_point(rot, mid, intr) else {
            break;
        };
        best = Some(p);
        let d = p.u - target_u;
        if d == 0.0 {
            break;
        }
        if d.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    match best {
        Some(p) => p.v,
        None => f64::NAN,
    }
}

/// Continue the segment `inner -> end` to `u = target_u`, if it heads there.
fn extrapolate(end: PixelPoint, inner: PixelPoint, target_u: f64) -> Option<f64> {
    let du = end.u - inner.u;
    if du.abs() < TINY || (target_u - end.u) * du < 0.0 {
        return None;
    }
    let t = (target_u - end.u) / du;
    Some(end.v + t * (end.v - inner.v))
}
