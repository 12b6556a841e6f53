//! Extract perspective and fisheye views from an equirectangular panorama
//! with the parallel remap engine.
//!
//! ```sh
//! cargo run --release --example panorama_view -- [PANORAMA.png]
//! ```

use std::f64::consts::PI;

use spherecal::dataset::CropCamera;
use spherecal::warp::{remap, BitDepth, BorderMode};
use spherecal::{Image, Intrinsics, Orientation, Result};

fn main() -> Result<()> {
    let pano = match std::env::args().nth(1) {
        Some(path) => Image::load_png(path)?,
        None => Image::from_fn(2048, 1024, 3, |x, y, c| {
            let lon = x as f64 / 2048.0 * 2.0 * PI;
            let lat = PI / 2.0 - y as f64 / 1024.0 * PI;
            let grid = ((lon * 18.0 / PI).fract() < 0.06 || (lat * 18.0 / PI).rem_euclid(1.0) < 0.06) as u8 as f32;
            let base = if lat > 0.0 { [0.4, 0.6, 0.9] } else { [0.4, 0.35, 0.25] };
            base[c] * (1.0 - 0.7 * grid)
        }),
    };
    let size = (pano.width(), pano.height());

    let views = [
        ("pinhole", 70.0, 0.0, 0.0, 0.0),
        ("tilted", 70.0, 0.0, 0.35, 0.2),
        ("fisheye", 175.0, 0.95, 0.1, 0.0),
        ("behind", 90.0, 0.3, 0.0, 0.0),
    ];
    for (i, (name, hfov_deg, xi, pitch, roll)) in views.into_iter().enumerate() {
        let intr = Intrinsics::from_hfov(f64::to_radians(hfov_deg), xi, 400.0, 300.0)?;
        let yaw = if name == "behind" { PI } else { 0.0 };
        let cam = CropCamera::new(intr, Orientation::new(pitch, roll), yaw, size);
        let start = std::time::Instant::now();
        let view = remap(&pano, 400, 300, &|x, y| Some(cam.source_coord(x, y)), BorderMode::WrapHorizontal);
        let path = std::env::temp_dir().join(format!("spherecal-view-{i}-{name}.png"));
        view.save_png(&path, BitDepth::Eight)?;
        println!("{name:<8} {:>7.2?} -> {}", start.elapsed(), path.display());
    }
    Ok(())
}
