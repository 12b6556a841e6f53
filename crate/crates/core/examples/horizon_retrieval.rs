//! Draw horizons and find images whose horizon matches a query camera.
//!
//! ```sh
//! cargo run --example horizon_retrieval
//! ```

use spherecal::horizon::{draw_horizon, horizon_feature, IndexEntry, RetrievalIndex};
use spherecal::warp::BitDepth;
use spherecal::{Image, Intrinsics, Orientation, Result};

fn main() -> Result<()> {
    let intr = Intrinsics::from_hfov(130f64.to_radians(), 0.8, 320.0, 240.0)?;
    let orient = Orientation::new(0.25, -0.15);
    let canvas = Image::from_fn(320, 240, 3, |_, y, c| [0.2, 0.25, 0.3][c] + 0.3 * y as f32 / 240.0);
    let drawn = draw_horizon(&canvas, orient, &intr, &[1.0, 0.85, 0.1], 3.0)?;
    let path = std::env::temp_dir().join("spherecal-horizon.png");
    drawn.save_png(&path, BitDepth::Eight)?;
    println!("overlay -> {}", path.display());

    // A small gallery of cameras indexed by where the horizon leaves the frame.
    let mut entries = Vec::new();
    let mut id = 0;
    for pitch_deg in (-30..=30).step_by(10) {
        for roll_deg in (-20..=20).step_by(10) {
            for xi in [0.0, 0.5, 0.9] {
                let cam = Intrinsics::from_hfov(100f64.to_radians(), xi, 320.0, 240.0)?;
                let o = Orientation::new(f64::to_radians(pitch_deg as f64), f64::to_radians(roll_deg as f64));
                let (v_left, v_right) = horizon_feature(o, &cam)?;
                entries.push(IndexEntry { id, v_left, v_right });
                println!("{id:3}: pitch {pitch_deg:+3} roll {roll_deg:+3} xi {xi:.1} -> ({v_left:+.3}, {v_right:+.3})");
                id += 1;
            }
        }
    }
    let index = RetrievalIndex::from_entries(entries);

    let query = Orientation::new(12f64.to_radians(), 9f64.to_radians());
    let query_cam = Intrinsics::from_hfov(95f64.to_radians(), 0.4, 320.0, 240.0)?;
    println!("\nquery pitch +12 roll +9 xi 0.4, nearest:");
    for m in index.query_camera(query, &query_cam, 5)? {
        println!("  id {:3} at distance {:.4}", m.id, m.distance);
    }
    Ok(())
}
