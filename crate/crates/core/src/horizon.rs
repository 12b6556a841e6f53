//! Horizon overlays and horizon-based image retrieval.
//!
//! Retrieval describes an image by where its horizon meets the left and
//! right image boundaries, in normalized units, and ranks candidates by
//! L2 distance between these features.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{horizon_curve, horizon_endpoints, Intrinsics, Orientation, PixelPoint};
use crate::dataset::ManifestRecord;
use crate::error::{Error, Result};
use crate::warp::Image;

const OVERLAY_SAMPLES: usize = 8192;

/// Draw the image of the horizon onto a copy of `img`.
///
/// The curve is rasterized as an anti-aliased polyline of the given
/// `thickness` (pixels). `color` needs one value per channel.
pub fn draw_horizon(
    img: &Image,
    orient: Orientation,
    intr: &Intrinsics,
    color: &[f32],
    thickness: f64,
) -> Result<Image> {
    if color.len() != img.channels() {
        return Err(Error::InvalidArgument(format!(
            "color has {} values, image has {} channels",
            color.len(),
            img.channels()
        )));
    }
    if !(thickness.is_finite() && thickness > 0.0) {
        return Err(Error::InvalidArgument(format!("thickness {thickness} must be positive")));
    }
    let curve = horizon_curve(orient, intr, OVERLAY_SAMPLES)?;
    let (w, h) = (img.width(), img.height());
    let reach = thickness / 2.0 + 0.5;
    // A jump this long between neighbors is a break in the curve (the
    // samples on either side of a direction that does not project).
    let max_step = w.max(h) as f64 / 2.0;
    let mut dist = vec![f64::INFINITY; w * h];
    for seg in curve.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if (b.u - a.u).hypot(b.v - a.v) > max_step {
            continue;
        }
        let x0 = (a.u.min(b.u) - reach).floor().max(0.0);
        let x1 = (a.u.max(b.u) + reach).ceil().min(w as f64);
        let y0 = (a.v.min(b.v) - reach).floor().max(0.0);
        let y1 = (a.v.max(b.v) + reach).ceil().min(h as f64);
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        for y in y0 as usize..y1 as usize {
            for x in x0 as usize..x1 as usize {
                let d = segment_distance(PixelPoint::new(x as f64 + 0.5, y as f64 + 0.5), a, b);
                let slot = &mut dist[y * w + x];
                *slot = slot.min(d);
            }
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let alpha = (reach - dist[y * w + x]).clamp(0.0, 1.0) as f32;
            if alpha > 0.0 {
                for (c, &col) in color.iter().enumerate() {
                    let v = img.get(x, y, c);
                    out.set(x, y, c, v + (col - v) * alpha);
                }
            }
        }
    }
    Ok(out)
}

fn segment_distance(p: PixelPoint, a: PixelPoint, b: PixelPoint) -> f64 {
    let (dx, dy) = (b.u - a.u, b.v - a.v);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.u - a.u) * dx + (p.v - a.v) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.u - (a.u + t * dx)).hypot(p.v - (a.v + t * dy))
}

/// Horizon feature: `v` at the left and right boundaries, normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: u64,
    pub v_left: f64,
    pub v_right: f64,
}

impl IndexEntry {
    pub fn feature(&self) -> (f64, f64) {
        (self.v_left, self.v_right)
    }
}

/// Feature of a camera.
pub fn horizon_feature(orient: Orientation, intr: &Intrinsics) -> Result<(f64, f64)> {
    horizon_endpoints(orient, intr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Match {
    pub id: u64,
    pub distance: f64,
}

/// A manifest record that could not be indexed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub id: u64,
    pub reason: String,
}

/// Exhaustive-scan index over horizon features, kept sorted by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
}

impl RetrievalIndex {
    pub fn from_entries(mut entries: Vec<IndexEntry>) -> Self {
        entries.sort_by_key(|e| e.id);
        RetrievalIndex { entries }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The `k` entries closest to `feature`, nearest first; equal
    /// distances are ordered by id.
    pub fn query(&self, feature: (f64, f64), k: usize) -> Result<Vec<Match>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut scored: Vec<Match> = self
            .entries
            .iter()
            .map(|e| Match {
                id: e.id,
                distance: (e.v_left - feature.0).hypot(e.v_right - feature.1),
            })
            .collect();
        let k = k.min(scored.len());
        let by_rank = |a: &Match, b: &Match| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored)
    }

    pub fn query_camera(&self, orient: Orientation, intr: &Intrinsics, k: usize) -> Result<Vec<Match>> {
        self.query(horizon_feature(orient, intr)?, k)
    }

    /// JSONL, one `{id, v_left, v_right}` object per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        for e in &self.entries {
            writeln!(
                out,
                "{{\"id\":{},\"v_left\":{:.16e},\"v_right\":{:.16e}}}",
                e.id, e.v_left, e.v_right
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }
}

/// Index every record whose horizon crosses both image boundaries.
pub fn build_index(records: &[ManifestRecord]) -> (RetrievalIndex, Vec<Skipped>) {
    let mut entries = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for r in records {
        let feature = r
            .intrinsics()
            .and_then(|intr| horizon_feature(r.orientation(), &intr));
        match feature {
            Ok((v_left, v_right)) => entries.push(IndexEntry {
                id: r.id,
                v_left,
                v_right,
            }),
            Err(e) => skipped.push(Skipped {
                id: r.id,
                reason: e.to_string(),
            }),
        }
    }
    (RetrievalIndex::from_entries(entries), skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::horizon_curve;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pinhole(w: f64, h: f64) -> Intrinsics {
        Intrinsics::new(w / 2.0, 0.0, w, h).unwrap()
    }

    #[test]
    fn level_line_through_center_row() {
        let intr = pinhole(64.0, 48.0);
        let img = Image::new(64, 48, 1);
        let out = draw_horizon(&img, Orientation::level(), &intr, &[1.0], 1.0).unwrap();
        for x in 0..64 {
            for y in 0..48 {
                let v = out.get(x, y, 0);
                // Row 23 and 24 straddle v0 = 24 at distance 0.5 each.
                let expected = if y == 23 || y == 24 { 0.5 } else { 0.0 };
                assert!((v - expected).abs() < 1e-6, "({x}, {y}) = {v}");
            }
        }
    }

    #[test]
    fn overlay_is_local() {
        let intr = Intrinsics::new(70.0, 0.9, 160.0, 120.0).unwrap();
        let orient = Orientation::new(0.2, 0.15);
        let img = Image::from_fn(160, 120, 3, |x, y, c| ((x + y + c) % 5) as f32 / 4.0);
        let t = 3.0;
        let out = draw_horizon(&img, orient, &intr, &[1.0, 0.0, 0.0], t).unwrap();
        let curve = horizon_curve(orient, &intr, 20000).unwrap();
        let mut changed = 0;
        for y in 0..120 {
            for x in 0..160 {
                if out.pixel(x, y) != img.pixel(x, y) {
                    changed += 1;
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    let d = curve
                        .iter()
                        .map(|q| (q.u - p.0).hypot(q.v - p.1))
                        .fold(f64::INFINITY, f64::min);
                    assert!(d <= t + 1.0, "({x}, {y}) changed at distance {d}");
                }
            }
        }
        assert!(changed > 160);
    }

    #[test]
    fn color_must_match_channels() {
        let img = Image::new(8, 8, 3);
        assert!(draw_horizon(&img, Orientation::level(), &pinhole(8.0, 8.0), &[1.0], 1.0).is_err());
    }

    fn record(id: u64, pitch: f64, roll: f64, hfov: f64, xi: f64) -> ManifestRecord {
        let intr = Intrinsics::from_hfov(hfov, xi, 224.0, 168.0).unwrap();
        ManifestRecord {
            id,
            file: String::new(),
            pano_id: String::new(),
            pitch_rad: pitch,
            roll_rad: roll,
            yaw_rad: 0.0,
            hfov_rad: hfov,
            xi,
            focal_px: intr.focal_px(),
            midpoint_units: 0.0,
            aspect: 224.0 / 168.0,
            seed: 0,
        }
    }

    #[test]
    fn level_pinhole_feature_is_zero() {
        let (index, skipped) = build_index(&[record(4, 0.0, 0.0, 1.0, 0.0)]);
        assert!(skipped.is_empty());
        let e = index.entries()[0];
        assert!(e.v_left.abs() < 1e-12 && e.v_right.abs() < 1e-12);
        assert_eq!(build_index(&[]).0.len(), 0);
    }

    #[test]
    fn skips_records_without_crossings() {
        let (index, skipped) = build_index(&[record(1, 0.1, 0.0, 1.0, 0.2), record(2, std::f64::consts::FRAC_PI_2, 0.0, 1.0, 0.0)]);
        assert_eq!(index.len(), 1);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].id, 2);
    }

    #[test]
    fn mirrored_roll_swaps_features() {
        let intr = pinhole(224.0, 168.0);
        let (l, r) = horizon_feature(Orientation::new(0.1, 0.2), &intr).unwrap();
        let (ml, mr) = horizon_feature(Orientation::new(0.1, -0.2), &intr).unwrap();
        assert!((l - mr).abs() < 1e-9 && (r - ml).abs() < 1e-9);
    }

    #[test]
    fn query_order_ties_and_errors() {
        let index = RetrievalIndex::from_entries(vec![
            IndexEntry { id: 9, v_left: 0.1, v_right: 0.0 },
            IndexEntry { id: 3, v_left: -0.1, v_right: 0.0 },
            IndexEntry { id: 5, v_left: 0.5, v_right: 0.5 },
        ]);
        let m = index.query((0.0, 0.0), 2).unwrap();
        assert_eq!(m.iter().map(|m| m.id).collect::<Vec<_>>(), vec![3, 9]);
        let all = index.query((0.5, 0.5), 10).unwrap();
        assert_eq!(all[0], Match { id: 5, distance: 0.0 });
        assert_eq!(all.len(), 3);
        assert!(matches!(RetrievalIndex::default().query((0.0, 0.0), 1), Err(Error::EmptyIndex)));
        assert!(index.query((0.0, 0.0), 0).is_err());
    }

    #[test]
    fn index_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        let records: Vec<_> = (0..20).map(|i| record(i, 0.02 * i as f64, -0.03 * i as f64, 1.2, 0.05 * i as f64)).collect();
        let (index, _) = build_index(&records);
        index.save(&path).unwrap();
        assert_eq!(RetrievalIndex::load(&path).unwrap(), index);
        assert_eq!(build_index(&records).0, index);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(seed in 0u64..200, k in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Coarse grid so that ties occur.
            let entries: Vec<_> = (0..60u64)
                .map(|id| IndexEntry {
                    id: id * 7 % 61,
                    v_left: rng.random_range(-3i32..=3) as f64 / 4.0,
                    v_right: rng.random_range(-3i32..=3) as f64 / 4.0,
                })
                .collect();
            let q = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut shuffled = entries.clone();
            shuffled.reverse();
            let a = RetrievalIndex::from_entries(entries.clone()).query(q, k).unwrap();
            let b = RetrievalIndex::from_entries(shuffled).query(q, k).unwrap();
            prop_assert_eq!(&a, &b);
            let mut oracle: Vec<(f64, u64)> = entries
                .iter()
                .map(|e| ((e.v_left - q.0).hypot(e.v_right - q.1), e.id))
                .collect();
            oracle.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let ids: Vec<u64> = a.iter().map(|m| m.id).collect();
            let want: Vec<u64> = oracle.iter().take(k).map(|o| o.1).collect();
            prop_assert_eq!(ids, want);
        }
    }
}
