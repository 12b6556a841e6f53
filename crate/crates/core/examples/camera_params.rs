//! Conversions among focal length, field of view, distortion and horizon
//! position for a few common lenses.
//!
//! ```sh
//! cargo run --example camera_params
//! ```

use nalgebra::Vector3;
use spherecal::camera::{
    backproject, effective_hfov, focal_from_fov, horizon_endpoints, horizon_midpoint, pitch_from_midpoint, project,
    xi_from_fov_focal,
};
use spherecal::params::{resolve, ParamQuery};
use spherecal::{Intrinsics, Orientation, PixelPoint, Result};

fn main() -> Result<()> {
    let (w, h) = (640.0, 480.0);

    println!("lens                   f [px]   hfov [deg]     xi");
    for (name, hfov_deg, xi) in [
        ("normal pinhole", 50.0, 0.0),
        ("wide pinhole", 90.0, 0.0),
        ("action camera", 120.0, 0.6),
        ("fisheye", 170.0, 0.95),
    ] {
        let f = focal_from_fov(f64::to_radians(hfov_deg), xi, w / 2.0)?;
        let back = xi_from_fov_focal(f64::to_radians(hfov_deg), f, w / 2.0)?;
        println!("{name:<20} {f:>8.2} {hfov_deg:>12.1} {back:>6.3}");
    }

    let intr = Intrinsics::new(260.0, 0.7, w, h)?;
    println!("\nf = 260 px, xi = 0.7 covers {:.2} deg", effective_hfov(&intr).to_degrees());

    let ray = Vector3::new(0.4, -0.2, 0.3);
    let px = project(ray, &intr)?;
    let back = backproject(px, &intr).vector();
    println!(
        "ray {:?} -> pixel ({:.3}, {:.3}) -> unit ray ({:.4}, {:.4}, {:.4})",
        ray.as_slice(),
        px.u,
        px.v,
        back.x,
        back.y,
        back.z
    );
    // Beyond 90 degrees off axis still projects when xi > 0.
    let behind = backproject(PixelPoint::new(2.0, h / 2.0), &intr).vector();
    println!("left edge looks along z = {:.3}", behind.z);

    for pitch_deg in [-20.0, 0.0, 15.0] {
        let orient = Orientation::new(f64::to_radians(pitch_deg), f64::to_radians(8.0));
        let m = horizon_midpoint(orient, &intr)?;
        let (left, right) = horizon_endpoints(orient, &intr)?;
        let recovered = pitch_from_midpoint(m, &intr)?.to_degrees();
        println!(
            "pitch {pitch_deg:>5.1}: midpoint {m:+.4}, edges ({left:+.4}, {right:+.4}), recovered pitch {recovered:+.6}"
        );
    }

    let r = resolve(&ParamQuery {
        width: 224.0,
        height: Some(224.0),
        hfov_rad: Some(f64::to_radians(90.0)),
        xi: Some(0.0),
        midpoint_units: Some(0.25),
        ..Default::default()
    })?;
    println!(
        "\n224 px wide pinhole at 90 deg: f = {} px, midpoint 0.25 means pitch {:.4} deg",
        r.focal_px,
        r.pitch_rad.unwrap_or_default().to_degrees()
    );
    Ok(())
}
