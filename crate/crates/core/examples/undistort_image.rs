//! Rectify a fisheye image to a pinhole image.
//!
//! With no arguments a synthetic fisheye grid is rendered first; otherwise
//! pass `INPUT XI HFOV_DEG OUTPUT`.
//!
//! ```sh
//! cargo run --release --example undistort_image
//! cargo run --release --example undistort_image -- photo.png 0.8 150 rectified.png
//! ```

use std::path::PathBuf;

use spherecal::camera::backproject;
use spherecal::undistort::{default_target, undistort, TargetLens, TargetSpec};
use spherecal::warp::BitDepth;
use spherecal::{Error, Image, Intrinsics, PixelPoint, Result};

/// A grid of straight lines on the plane z = 1, seen through `intr`.
fn fisheye_grid(intr: &Intrinsics) -> Image {
    let (w, h) = (intr.width() as usize, intr.height() as usize);
    Image::from_fn(w, h, 1, |x, y, _| {
        let d = backproject(PixelPoint::new(x as f64 + 0.5, y as f64 + 0.5), intr).vector();
        if d.z <= 0.05 {
            return 0.0;
        }
        let (px, py) = (d.x / d.z * 4.0, d.y / d.z * 4.0);
        let line = |t: f64| (t - t.round()).abs() < 0.02;
        if line(px) || line(py) { 1.0 } else { 0.2 }
    })
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (src, intr, out) = match args.as_slice() {
        [input, xi, hfov, output] => {
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{s}: {e}")));
            let src = Image::load_png(input)?;
            let intr = Intrinsics::from_hfov(
                parse(hfov)?.to_radians(),
                parse(xi)?,
                src.width() as f64,
                src.height() as f64,
            )?;
            (src, intr, PathBuf::from(output))
        }
        [] => {
            let intr = Intrinsics::from_hfov(160f64.to_radians(), 0.9, 512.0, 512.0)?;
            let src = fisheye_grid(&intr);
            let path = std::env::temp_dir().join("spherecal-fisheye.png");
            src.save_png(&path, BitDepth::Eight)?;
            println!("synthetic fisheye -> {}", path.display());
            (src, intr, std::env::temp_dir().join("spherecal-rectified.png"))
        }
        _ => return Err(Error::InvalidArgument("usage: undistort_image [INPUT XI HFOV_DEG OUTPUT]".into())),
    };

    let center_scale = default_target(&intr);
    let wide = TargetSpec {
        lens: TargetLens::HfovRad(110f64.to_radians()),
        ..center_scale
    };
    for (name, target) in [("center scale", center_scale), ("110 deg", wide)] {
        let start = std::time::Instant::now();
        let rectified = undistort(&src, &intr, &target)?;
        let path = out.with_file_name(format!(
            "{}-{}.png",
            out.file_stem().and_then(|s| s.to_str()).unwrap_or("rectified"),
            name.replace(' ', "-")
        ));
        rectified.save_png(&path, BitDepth::Eight)?;
        println!(
            "{name}: f = {:.2} px, {:?} -> {}",
            target.intrinsics()?.focal_px(),
            start.elapsed(),
            path.display()
        );
    }
    Ok(())
}
