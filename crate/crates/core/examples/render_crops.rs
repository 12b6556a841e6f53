//! Render labeled crops from a synthetic equirectangular panorama, then run
//! the full dataset generator on a small directory of panoramas.
//!
//! ```sh
//! cargo run --release --example render_crops -- /tmp/crops
//! ```

use std::f64::consts::PI;
use std::path::PathBuf;

use spherecal::dataset::{generate_dataset, read_manifest, read_splits, render_crop, sample_crop_spec, SamplingConfig};
use spherecal::warp::BitDepth;
use spherecal::{Image, Result};

/// Sky gradient over a ground checkerboard, with a seam-free meridian stripe
/// pattern so yaw is visible.
fn synthetic_panorama(width: usize, tint: f32) -> Image {
    let height = width / 2;
    Image::from_fn(width, height, 3, |x, y, c| {
        let lon = (x as f64 + 0.5) / width as f64 * 2.0 * PI;
        let lat = PI / 2.0 - (y as f64 + 0.5) / height as f64 * PI;
        let stripes = (0.5 + 0.5 * (8.0 * lon).sin()) as f32;
        if lat > 0.0 {
            let sky = [0.35, 0.55, 0.9][c];
            sky * (0.6 + 0.4 * lat as f32) + 0.1 * stripes
        } else {
            let check = (((lon * 12.0 / PI).floor() + (lat * 12.0 / PI).floor()) as i64).rem_euclid(2) as f32;
            [0.35, 0.3, 0.2][c] * (0.5 + 0.5 * check) + tint
        }
    })
}

fn main() -> Result<()> {
    env_logger::init();
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("spherecal-render-crops"));
    std::fs::create_dir_all(&out).map_err(|e| spherecal::Error::InvalidArgument(e.to_string()))?;

    let pano = synthetic_panorama(1024, 0.0);
    let config = SamplingConfig::default();
    for i in 0..4u64 {
        let spec = sample_crop_spec(1000 + i, &config, "demo")?;
        let (crop, label) = render_crop(&pano, &spec, config.output_size)?;
        let path = out.join(format!("single_{i}.png"));
        crop.save_png(&path, BitDepth::Eight)?;
        println!(
            "{}: yaw {:6.1} pitch {:+5.1} roll {:+5.1} hfov {:5.1} xi {:.3} midpoint {:+.3}",
            path.display(),
            spec.yaw_rad.to_degrees(),
            label.pitch_rad.to_degrees(),
            label.roll_rad.to_degrees(),
            label.hfov_rad.to_degrees(),
            label.xi,
            label.midpoint_units
        );
    }

    let panos = out.join("panos");
    std::fs::create_dir_all(&panos).map_err(|e| spherecal::Error::InvalidArgument(e.to_string()))?;
    for (i, tint) in [0.0f32, 0.1, 0.2].into_iter().enumerate() {
        synthetic_panorama(512, tint).save_png(panos.join(format!("pano_{i}.png")), BitDepth::Eight)?;
    }
    let dataset = out.join("dataset");
    let report = generate_dataset(&panos, &dataset, &config, 30, 7)?;
    println!(
        "\n{} records ({} rendered, {} reused) in {}",
        report.records,
        report.rendered,
        report.reused,
        dataset.display()
    );
    let again = generate_dataset(&panos, &dataset, &config, 30, 7)?;
    println!("second run reused {} of {}", again.reused, again.records);

    let records = read_manifest(&report.manifest)?;
    let first = &records[0];
    println!("first record: {}", first.to_json_line());
    for (pano, split) in read_splits(&report.splits)? {
        println!("{pano}: {split:?}");
    }
    Ok(())
}
