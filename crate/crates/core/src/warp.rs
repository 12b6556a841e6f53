//! Inverse-mapping image resampler.
//!
//! Every target pixel `(u, v)` asks an [`InverseMap`] for a source
//! coordinate at its center `(u + 0.5, v + 0.5)` and bilinearly interpolates
//! the source there. Coordinates on both sides use the continuous pixel
//! convention where pixel `i` spans `[i, i + 1)`.
//!
//! Rows are processed in independent bands on the rayon pool, so the output
//! does not depend on the schedule.

use std::ops::Range;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per parallel work unit.
const BAND_ROWS: usize = 8;

/// Row-major image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "{}x{}x{} image needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Build an image by evaluating `f(x, y, channel)` at each pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32 + Sync,
    ) -> Self {
        let mut data = vec![0.0; width * height * channels];
        data.par_chunks_mut(width * channels)
            .enumerate()
            .for_each(|(y, row)| {
                for x in 0..width {
                    for c in 0..channels {
                        row[x * channels + c] = f(x, y, c);
                    }
                }
            });
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Rows `rows` copied into a new image.
    pub fn rows(&self, rows: Range<usize>) -> Image {
        let stride = self.width * self.channels;
        Image {
            width: self.width,
            height: rows.len(),
            channels: self.channels,
            data: self.data[rows.start * stride..rows.end * stride].to_vec(),
        }
    }

    /// Gray and RGB PNGs (8 or 16 bit); alpha is dropped.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Image {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let gray = matches!(
            img,
            DynamicImage::ImageLuma8(_)
                | DynamicImage::ImageLumaA8(_)
                | DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
        );
        let deep = matches!(
            img,
            DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
                | DynamicImage::ImageRgb16(_)
                | DynamicImage::ImageRgba16(_)
        );
        let data: Vec<f32> = match (gray, deep) {
            (true, false) => img.to_luma8().into_raw().into_iter().map(from_u8).collect(),
            (true, true) => img.to_luma16().into_raw().into_iter().map(from_u16).collect(),
            (false, false) => img.to_rgb8().into_raw().into_iter().map(from_u8).collect(),
            (false, true) => img.to_rgb16().into_raw().into_iter().map(from_u16).collect(),
        };
        Image {
            width,
            height,
            channels: if gray { 1 } else { 3 },
            data,
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>, bit_depth: BitDepth) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let dynamic = match (self.channels, bit_depth) {
            (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, self.data.iter().map(|&v| to_u8(v)).collect())
                    .expect("buffer size checked at construction"),
            ),
            (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, _>::from_raw(w, h, self.data.iter().map(|&v| to_u16(v)).collect())
                    .expect("buffer size checked at construction"),
            ),
            (_, BitDepth::Eight) => DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.data.iter().map(|&v| to_u8(v)).collect())
                    .expect("buffer size checked at construction"),
            ),
            (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, self.data.iter().map(|&v| to_u16(v)).collect())
                    .expect("buffer size checked at construction"),
            ),
        };
        dynamic.save(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

fn from_u16(v: u16) -> f32 {
    v as f32 / 65535.0
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// How reads outside the source are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderMode {
    /// Clamp both coordinates to the edge pixels.
    #[default]
    Clamp,
    /// Wrap `x` around the image width and clamp `y`, for equirectangular
    /// sources.
    WrapHorizontal,
}

/// Target pixel center to source coordinate. `None` leaves the pixel black.
///
/// Implementations must be pure: the same input always yields the same
/// output.
pub trait InverseMap: Sync {
    fn source(&self, x: f64, y: f64) -> Option<(f64, f64)>;
}

impl<F> InverseMap for F
where
    F: Fn(f64, f64) -> Option<(f64, f64)> + Sync,
{
    fn source(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self(x, y)
    }
}

/// Bilinear sample with pixel centers at integer coordinates: `(x, y)`
/// reads exactly pixel `(x, y)` when both are integers.
///
/// `out` must hold `src.channels()` values.
#[inline]
pub fn bilinear_sample_into(src: &Image, x: f64, y: f64, border: BorderMode, out: &mut [f32]) {
    let w = src.width;
    let h = src.height;
    let (x0, x1, fx) = match border {
        BorderMode::Clamp => clamped_pair(x, w),
        BorderMode::WrapHorizontal => wrapped_pair(x, w),
    };
    let (y0, y1, fy) = clamped_pair(y, h);
    let (fx, fy) = (fx as f32, fy as f32);
    let c = src.channels;
    let row0 = y0 * w;
    let row1 = y1 * w;
    let d = &src.data;
    let (i00, i10, i01, i11) = ((row0 + x0) * c, (row0 + x1) * c, (row1 + x0) * c, (row1 + x1) * c);
    for k in 0..c {
        let top = d[i00 + k] + (d[i10 + k] - d[i00 + k]) * fx;
        let bottom = d[i01 + k] + (d[i11 + k] - d[i01 + k]) * fx;
        let v = top + (bottom - top) * fy;
        // Guard the convex-combination bound against rounding.
        let lo = d[i00 + k].min(d[i10 + k]).min(d[i01 + k]).min(d[i11 + k]);
        let hi = d[i00 + k].max(d[i10 + k]).max(d[i01 + k]).max(d[i11 + k]);
        out[k] = v.clamp(lo, hi);
    }
}

/// Allocating convenience wrapper around [`bilinear_sample_into`].
pub fn bilinear_sample(src: &Image, x: f64, y: f64, border: BorderMode) -> Vec<f32> {
    let mut out = vec![0.0; src.channels];
    bilinear_sample_into(src, x, y, border, &mut out);
    out
}

#[inline]
fn clamped_pair(x: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max) };
    let x0 = x.floor();
    let i0 = x0 as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, x - x0)
}

#[inline]
fn wrapped_pair(x: f64, n: usize) -> (usize, usize, f64) {
    let x = if x.is_finite() { x.rem_euclid(n as f64) } else { 0.0 };
    let x0 = x.floor();
    let i0 = (x0 as usize).min(n - 1);
    let i1 = (i0 + 1) % n;
    (i0, i1, x - x0)
}

/// Resample `src` into a `width x height` image through `map`.
pub fn remap(
    src: &Image,
    width: usize,
    height: usize,
    map: &impl InverseMap,
    border: BorderMode,
) -> Image {
    let mut out = Image::new(width, height, src.channels);
    remap_into(src, &mut out, 0, map, border);
    out
}

/// Fill `dst` with target rows starting at `row_offset`; `dst` may be any
/// horizontal tile of the full target.
pub fn remap_into(
    src: &Image,
    dst: &mut Image,
    row_offset: usize,
    map: &impl InverseMap,
    border: BorderMode,
) {
    assert_eq!(src.channels, dst.channels, "channel count mismatch");
    let width = dst.width;
    let c = dst.channels;
    let band = BAND_ROWS * width * c;
    if band == 0 {
        return;
    }
    dst.data
        .par_chunks_mut(band)
        .enumerate()
        .for_each(|(b, chunk)| {
            let first_row = row_offset + b * BAND_ROWS;
            for (r, row) in chunk.chunks_mut(width * c).enumerate() {
                let y = (first_row + r) as f64 + 0.5;
                remap_row(src, row, y, map, border);
            }
        });
}

#[inline]
fn remap_row(src: &Image, row: &mut [f32], y: f64, map: &impl InverseMap, border: BorderMode) {
    let c = src.channels;
    for (u, px) in row.chunks_mut(c).enumerate() {
        match map.source(u as f64 + 0.5, y) {
            Some((sx, sy)) => bilinear_sample_into(src, sx - 0.5, sy - 0.5, border, px),
            None => px.fill(0.0),
        }
    }
}

/// Anisotropic bilinear resize.
pub fn resize(src: &Image, width: usize, height: usize) -> Image {
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    remap(src, width, height, &move |x: f64, y: f64| Some((x * sx, y * sy)), BorderMode::Clamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 1, |x, y, _| ((x * 7 + y * 13) % 17) as f32 / 16.0)
    }

    #[test]
    fn identity_map_is_exact() {
        let src = Image::from_fn(13, 9, 3, |x, y, c| ((x * 31 + y * 17 + c * 5) % 23) as f32 / 22.0);
        let out = remap(&src, 13, 9, &|x, y| Some((x, y)), BorderMode::Clamp);
        assert_eq!(out, src);
    }

    #[test]
    fn half_pixel_shift_averages_neighbors() {
        let src = Image::from_vec(2, 1, 1, vec![0.2, 0.6]).unwrap();
        let out = remap(&src, 1, 1, &|x, y| Some((x + 0.5, y)), BorderMode::Clamp);
        assert!((out.get(0, 0, 0) - 0.4).abs() < 1e-7);
    }

    #[test]
    fn wrap_matches_shifted_read() {
        let src = gradient(16, 8);
        let a = bilinear_sample(&src, 16.25, 3.3, BorderMode::WrapHorizontal);
        let b = bilinear_sample(&src, 0.25, 3.3, BorderMode::WrapHorizontal);
        assert_eq!(a, b);
        // Between the last and first column.
        let v = bilinear_sample(&src, 15.5, 2.0, BorderMode::WrapHorizontal)[0];
        let expected = 0.5 * (src.get(15, 2, 0) + src.get(0, 2, 0));
        assert!((v - expected).abs() < 1e-7);
        // Clamp mode sticks to the edge instead.
        let v = bilinear_sample(&src, 15.5, 2.0, BorderMode::Clamp)[0];
        assert_eq!(v, src.get(15, 2, 0));
    }

    #[test]
    fn sample_examples() {
        let src = gradient(5, 4);
        assert_eq!(bilinear_sample(&src, 2.0, 3.0, BorderMode::Clamp)[0], src.get(2, 3, 0));
        let flat = Image::from_vec(2, 1, 1, vec![0.3, 0.3]).unwrap();
        assert_eq!(bilinear_sample(&flat, 0.5, 0.0, BorderMode::Clamp)[0], 0.3);
        let checker = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(bilinear_sample(&checker, 0.5, 0.5, BorderMode::Clamp)[0], 0.5);
    }

    #[test]
    fn unmapped_pixels_are_black() {
        let src = Image::filled(4, 4, 1, 1.0);
        let out = remap(&src, 4, 4, &|x: f64, _| (x < 2.0).then_some((x, 1.0)), BorderMode::Clamp);
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.get(3, 0, 0), 0.0);
    }

    #[test]
    fn tiles_concatenate_to_whole() {
        let src = gradient(40, 30);
        let map = |x: f64, y: f64| Some((x * 0.77 + y * 0.1, y * 0.9 + 1.3));
        let whole = remap(&src, 33, 29, &map, BorderMode::Clamp);
        let mut stitched = Vec::new();
        for rows in [0..5, 5..17, 17..29] {
            let mut tile = Image::new(33, rows.len(), 1);
            remap_into(&src, &mut tile, rows.start, &map, BorderMode::Clamp);
            assert_eq!(tile, whole.rows(rows.clone()));
            stitched.extend_from_slice(tile.as_slice());
        }
        assert_eq!(stitched, whole.as_slice());
    }

    #[test]
    fn deterministic_across_pools() {
        let src = gradient(64, 48);
        let map = |x: f64, y: f64| Some((x * 1.3 - 4.0, (y * 0.4).sin() * 10.0 + 20.0));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| remap(&src, 50, 70, &map, BorderMode::WrapHorizontal));
        let b = four.install(|| remap(&src, 50, 70, &map, BorderMode::WrapHorizontal));
        assert_eq!(a, b);
    }

    #[test]
    fn png_round_trip_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::from_fn(7, 5, 3, |x, y, c| ((x + 2 * y + c) % 9) as f32 / 8.0);
        img.save_png(&path, BitDepth::Sixteen).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn from_vec_validates() {
        assert!(Image::from_vec(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn output_stays_in_source_range(
            seed in 0u64..1000,
            ax in -3.0f64..3.0, bx in -20.0f64..20.0,
            ay in -3.0f64..3.0, by in -20.0f64..20.0,
            wrap in any::<bool>(),
        ) {
            let src = Image::from_fn(11, 7, 1, |x, y, _| {
                let h = ((x as u64 * 2654435761) ^ (y as u64 * 40503) ^ seed).wrapping_mul(0x9E3779B97F4A7C15);
                (h >> 40) as f32 / (1u64 << 24) as f32
            });
            let (lo, hi) = src.min_max();
            let border = if wrap { BorderMode::WrapHorizontal } else { BorderMode::Clamp };
            let out = remap(&src, 9, 9, &|x: f64, y: f64| Some((ax * x + bx, ay * y + by)), border);
            for &v in out.as_slice() {
                prop_assert!(v >= lo && v <= hi);
            }
        }
    }
}
