//! Labeled training crops from equirectangular panoramas.
//!
//! Each crop draws a camera (field of view, distortion, horizon, roll,
//! aspect ratio, yaw) from [`SamplingConfig`], renders it from a panorama
//! through the spherical model and records the ground truth in a JSONL
//! manifest. Every crop owns an RNG stream keyed by
//! `(seed, pano_id, crop_index)`, so output does not depend on scheduling.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use nalgebra::{Matrix3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, LogNormal, Normal, Triangular};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{
    backproject_normalized, effective_hfov, horizon_midpoint, pitch_from_midpoint,
    rotation_matrix, yaw_matrix, Intrinsics, Orientation,
};
use crate::error::{Error, Result};
use crate::warp::{remap, BitDepth, BorderMode, Image};

/// Allowed relative deviation of a panorama from 2:1.
pub const PANO_ASPECT_TOLERANCE: f64 = 0.02;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPLITS_FILE: &str = "splits.jsonl";
pub const CROPS_DIR: &str = "crops";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalDist {
    /// Mean of the lognormal variate, in mm.
    pub mean_mm: f64,
    /// Standard deviation of the lognormal variate, in mm.
    pub std_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonDist {
    /// Normal distribution of the midpoint, in normalized units.
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauchyComponent {
    pub gamma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollDist {
    /// Zero-centered Cauchy components, in radians.
    pub components: Vec<CauchyComponent>,
    /// Rolls beyond `±limit_rad` are redrawn.
    pub limit_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectRatio {
    pub w: u32,
    pub h: u32,
    pub weight: f64,
}

impl AspectRatio {
    pub fn ratio(&self) -> f64 {
        self.w as f64 / self.h as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangularComponent {
    pub mode: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionDist {
    /// Triangular components on `[0, 1]`.
    pub components: Vec<TriangularComponent>,
}

impl DistortionDist {
    /// Analytic CDF of the normalized mixture.
    pub fn cdf(&self, x: f64) -> f64 {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        self.components
            .iter()
            .map(|c| c.weight / total * triangular_cdf(x, c.mode))
            .sum()
    }
}

/// CDF of the triangular distribution on `[0, 1]` with the given mode.
pub fn triangular_cdf(x: f64, mode: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else if x <= mode {
        x * x / mode
    } else {
        1.0 - (1.0 - x) * (1.0 - x) / (1.0 - mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Camera distributions and rendering settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub focal_mm: FocalDist,
    pub horizon: HorizonDist,
    pub roll: RollDist,
    pub aspect_ratios: Vec<AspectRatio>,
    pub distortion: DistortionDist,
    /// Accepted horizontal field of view, in radians.
    pub hfov_range: (f64, f64),
    /// Horizontal sensor width used to turn mm into pixels.
    pub sensor_width_mm: f64,
    pub crops_per_pano: u32,
    pub output_size: (u32, u32),
    /// Height of the pre-resize render; its width follows the aspect ratio.
    pub render_height: u32,
    pub max_retries: usize,
    pub splits: Splits,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            focal_mm: FocalDist {
                mean_mm: 14.0,
                std_mm: 16.0,
                min_mm: 8.0,
                max_mm: 400.0,
            },
            horizon: HorizonDist {
                mean: 0.523,
                std: 0.3,
            },
            roll: RollDist {
                components: vec![
                    CauchyComponent {
                        gamma: 0.001,
                        weight: 0.33,
                    },
                    CauchyComponent {
                        gamma: 0.1,
                        weight: 0.66,
                    },
                ],
                limit_rad: FRAC_PI_2,
            },
            aspect_ratios: [(1, 1, 0.11), (5, 4, 0.11), (4, 3, 0.66), (3, 2, 0.11), (16, 9, 0.11)]
                .into_iter()
                .map(|(w, h, weight)| AspectRatio { w, h, weight })
                .collect(),
            distortion: DistortionDist {
                components: vec![
                    TriangularComponent {
                        mode: 0.03,
                        weight: 0.8,
                    },
                    TriangularComponent {
                        mode: 0.0,
                        weight: 0.2,
                    },
                ],
            },
            hfov_range: (0.33, 2.6),
            sensor_width_mm: 36.0,
            crops_per_pano: 7,
            output_size: (224, 224),
            render_height: 224,
            max_retries: 1000,
            splits: Splits {
                train: 0.9,
                val: 0.01,
                test: 0.09,
            },
        }
    }
}

fn positive_weights<T>(items: &[T], weight: impl Fn(&T) -> f64, what: &str) -> Result<()> {
    if items.is_empty() || items.iter().any(|i| !(weight(i).is_finite() && weight(i) > 0.0)) {
        return Err(Error::InvalidArgument(format!("{what} needs positive weights")));
    }
    Ok(())
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let f = &self.focal_mm;
        if !(f.mean_mm > 0.0 && f.std_mm > 0.0 && 0.0 < f.min_mm && f.min_mm < f.max_mm) {
            return bad(format!("invalid focal distribution {f:?}"));
        }
        if !(self.horizon.std > 0.0 && self.horizon.mean.is_finite()) {
            return bad(format!("invalid horizon distribution {:?}", self.horizon));
        }
        positive_weights(&self.roll.components, |c| c.weight, "roll mixture")?;
        if self.roll.components.iter().any(|c| !(c.gamma > 0.0))
            || !(self.roll.limit_rad > 0.0 && self.roll.limit_rad <= FRAC_PI_2)
        {
            return bad(format!("invalid roll distribution {:?}", self.roll));
        }
        positive_weights(&self.aspect_ratios, |a| a.weight, "aspect ratios")?;
        if self.aspect_ratios.iter().any(|a| a.w == 0 || a.h == 0) {
            return bad("aspect ratios must be positive".into());
        }
        positive_weights(&self.distortion.components, |c| c.weight, "distortion mixture")?;
        if self.distortion.components.iter().any(|c| !(0.0..=1.0).contains(&c.mode)) {
            return bad("distortion modes must lie in [0, 1]".into());
        }
        let (lo, hi) = self.hfov_range;
        if !(0.0 < lo && lo < hi && hi < PI) {
            return bad(format!("hfov range [{lo}, {hi}] must lie in (0, pi)"));
        }
        if !(self.sensor_width_mm > 0.0) {
            return bad("sensor width must be positive".into());
        }
        if self.crops_per_pano == 0 || self.render_height == 0 || self.output_size.0 == 0 || self.output_size.1 == 0 {
            return bad("crop counts and sizes must be positive".into());
        }
        let s = &self.splits;
        if [s.train, s.val, s.test].iter().any(|&x| !(x >= 0.0)) || s.train + s.val + s.test <= 0.0 {
            return bad(format!("invalid split fractions {s:?}"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: SamplingConfig =
            serde_json::from_str(text).map_err(|e| Error::json("sampling config", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn render_size(&self, aspect: &AspectRatio) -> (u32, u32) {
        let h = self.render_height;
        let w = (h as f64 * aspect.ratio()).round().max(1.0) as u32;
        (w, h)
    }
}

/// Sampled camera for one crop, in the pre-resize render frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub pano_id: String,
    pub yaw_rad: f64,
    pub pitch_rad: f64,
    pub roll_rad: f64,
    pub hfov_rad: f64,
    pub xi: f64,
    /// Nominal aspect ratio drawn from the config.
    pub aspect_ratio: (u32, u32),
    pub render_size: (u32, u32),
    pub seed: u64,
}

impl CropSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let (w, h) = (self.render_size.0 as f64, self.render_size.1 as f64);
        Intrinsics::from_hfov(self.hfov_rad, self.xi, w, h)
    }

    pub fn orientation(&self) -> Orientation {
        Orientation::new(self.pitch_rad, self.roll_rad)
    }

    pub fn label(&self) -> Result<CropLabel> {
        let intr = self.intrinsics()?;
        Ok(CropLabel {
            roll_rad: self.roll_rad,
            midpoint_units: horizon_midpoint(self.orientation(), &intr)?,
            hfov_rad: self.hfov_rad,
            xi: self.xi,
            focal_px: intr.focal_px(),
            pitch_rad: self.pitch_rad,
        })
    }
}

/// Ground truth of one crop, defined in the pre-resize frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropLabel {
    pub roll_rad: f64,
    pub midpoint_units: f64,
    pub hfov_rad: f64,
    pub xi: f64,
    pub focal_px: f64,
    pub pitch_rad: f64,
}

/// Seed of crop `crop_index` of panorama `pano_id`: the first eight bytes
/// of `sha256(seed || pano_id || crop_index)`.
pub fn crop_seed(seed: u64, pano_id: &str, crop_index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(pano_id.as_bytes());
    hasher.update(crop_index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Ready-to-sample form of a [`SamplingConfig`].
struct Samplers {
    focal: LogNormal<f64>,
    horizon: Normal<f64>,
    roll_pick: WeightedIndex<f64>,
    rolls: Vec<Cauchy<f64>>,
    aspect_pick: WeightedIndex<f64>,
    distortion_pick: WeightedIndex<f64>,
    distortions: Vec<Triangular<f64>>,
}

impl Samplers {
    fn new(config: &SamplingConfig) -> Result<Self> {
        config.validate()?;
        let bad = |what: &str| Error::InvalidArgument(format!("invalid {what} distribution"));
        let f = &config.focal_mm;
        Ok(Samplers {
            focal: LogNormal::from_mean_cv(f.mean_mm, f.std_mm / f.mean_mm).map_err(|_| bad("focal"))?,
            horizon: Normal::new(config.horizon.mean, config.horizon.std).map_err(|_| bad("horizon"))?,
            roll_pick: WeightedIndex::new(config.roll.components.iter().map(|c| c.weight))
                .map_err(|_| bad("roll"))?,
            rolls: config
                .roll
                .components
                .iter()
                .map(|c| Cauchy::new(0.0, c.gamma).map_err(|_| bad("roll")))
                .collect::<Result<_>>()?,
            aspect_pick: WeightedIndex::new(config.aspect_ratios.iter().map(|a| a.weight))
                .map_err(|_| bad("aspect"))?,
            distortion_pick: WeightedIndex::new(config.distortion.components.iter().map(|c| c.weight))
                .map_err(|_| bad("distortion"))?,
            distortions: config
                .distortion
                .components
                .iter()
                .map(|c| Triangular::new(0.0, 1.0, c.mode).map_err(|_| bad("distortion")))
                .collect::<Result<_>>()?,
        })
    }
}

/// Draw a camera for one crop from the seed of its RNG stream.
///
/// Out-of-range draws redraw only the offending variable: the focal length
/// when the field of view leaves `hfov_range` (or the focal leaves its
/// truncation interval), the horizon when no pitch produces it, and the
/// roll when it exceeds the limit. `xi`, yaw and aspect are never
/// rejected, so their marginals are exactly the configured ones.
pub fn sample_crop_spec(seed: u64, config: &SamplingConfig, pano_id: &str) -> Result<CropSpec> {
    let samplers = Samplers::new(config)?;
    sample_with(&samplers, seed, config, pano_id)
}

fn sample_with(s: &Samplers, seed: u64, config: &SamplingConfig, pano_id: &str) -> Result<CropSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejections = 0usize;
    let mut reject = |what: &str| {
        rejections += 1;
        if rejections > config.max_retries {
            Err(Error::SamplingExhausted(config.max_retries))
        } else {
            debug!("crop {pano_id}/{seed:016x}: redrawing {what}");
            Ok(())
        }
    };

    let yaw_rad = rng.random_range(0.0..TAU);
    let aspect = config.aspect_ratios[s.aspect_pick.sample(&mut rng)];
    let (w, h) = config.render_size(&aspect);
    let xi = s.distortions[s.distortion_pick.sample(&mut rng)].sample(&mut rng);

    let (lo, hi) = config.hfov_range;
    let hfov_rad = loop {
        let f_mm = s.focal.sample(&mut rng);
        if (config.focal_mm.min_mm..=config.focal_mm.max_mm).contains(&f_mm) {
            let f_px = f_mm / config.sensor_width_mm * w as f64;
            let hfov = effective_hfov(&Intrinsics::new(f_px, xi, w as f64, h as f64)?);
            if (lo..=hi).contains(&hfov) {
                break hfov;
            }
        }
        reject("focal")?;
    };
    let intr = Intrinsics::from_hfov(hfov_rad, xi, w as f64, h as f64)?;

    let roll_rad = loop {
        let roll = s.rolls[s.roll_pick.sample(&mut rng)].sample(&mut rng);
        if roll.abs() <= config.roll.limit_rad {
            break roll;
        }
        reject("roll")?;
    };

    let pitch_rad = loop {
        let midpoint = s.horizon.sample(&mut rng);
        match pitch_from_midpoint(midpoint, &intr) {
            Ok(pitch) => break pitch,
            Err(_) => reject("horizon")?,
        }
    };

    Ok(CropSpec {
        pano_id: pano_id.to_string(),
        yaw_rad,
        pitch_rad,
        roll_rad,
        hfov_rad,
        xi,
        aspect_ratio: (aspect.w, aspect.h),
        render_size: (w, h),
        seed,
    })
}

/// Inverse map from a crop's render frame into an equirectangular
/// panorama.
#[derive(Debug, Clone)]
pub struct CropCamera {
    intr: Intrinsics,
    /// World to camera without yaw, transposed.
    rot_t: Matrix3<f64>,
    yaw_t: Matrix3<f64>,
    pano_size: (f64, f64),
}

impl CropCamera {
    pub fn new(intr: Intrinsics, orient: Orientation, yaw_rad: f64, pano_size: (usize, usize)) -> Self {
        CropCamera {
            intr,
            rot_t: rotation_matrix(orient).transpose(),
            yaw_t: yaw_matrix(yaw_rad).transpose(),
            pano_size: (pano_size.0 as f64, pano_size.1 as f64),
        }
    }

    pub fn from_spec(spec: &CropSpec, pano_size: (usize, usize)) -> Result<Self> {
        Ok(Self::new(spec.intrinsics()?, spec.orientation(), spec.yaw_rad, pano_size))
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intr
    }

    /// World viewing direction of render-frame pixel coordinate `(x, y)`.
    pub fn world_direction(&self, x: f64, y: f64) -> Vector3<f64> {
        let (u0, v0) = self.intr.principal_point();
        let f = self.intr.focal_px();
        let d_cam = backproject_normalized((x - u0) / f, (y - v0) / f, self.intr.xi());
        // Yaw is applied last so that it only shifts longitude.
        self.yaw_t * (self.rot_t * d_cam)
    }

    /// Panorama pixel coordinate seen by render-frame coordinate `(x, y)`.
    pub fn source_coord(&self, x: f64, y: f64) -> (f64, f64) {
        let d = self.world_direction(x, y);
        let lon = d.x.atan2(d.z);
        let lat = (-d.y).clamp(-1.0, 1.0).asin();
        let (pw, ph) = self.pano_size;
        ((lon / TAU + 0.5) * pw, (0.5 - lat / PI) * ph)
    }
}

pub fn check_panorama(pano: &Image) -> Result<()> {
    let ratio = pano.width() as f64 / pano.height() as f64;
    if ((ratio - 2.0) / 2.0).abs() > PANO_ASPECT_TOLERANCE {
        return Err(Error::BadPanoramaAspect {
            width: pano.width(),
            height: pano.height(),
        });
    }
    Ok(())
}

/// Render `spec` from `pano` and resize to `output_size`.
///
/// The crop is rendered at `spec.render_size` and resized anisotropically
/// in the same resampling pass. The label refers to the render frame.
pub fn render_crop(pano: &Image, spec: &CropSpec, output_size: (u32, u32)) -> Result<(Image, CropLabel)> {
    check_panorama(pano)?;
    let camera = CropCamera::from_spec(spec, (pano.width(), pano.height()))?;
    let (ow, oh) = (output_size.0 as usize, output_size.1 as usize);
    let sx = spec.render_size.0 as f64 / ow as f64;
    let sy = spec.render_size.1 as f64 / oh as f64;
    let map = |x: f64, y: f64| Some(camera.source_coord(x * sx, y * sy));
    let img = remap(pano, ow, oh, &map, BorderMode::WrapHorizontal);
    Ok((img, spec.label()?))
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: u64,
    pub file: String,
    pub pano_id: String,
    pub pitch_rad: f64,
    pub roll_rad: f64,
    pub yaw_rad: f64,
    pub hfov_rad: f64,
    pub xi: f64,
    pub focal_px: f64,
    pub midpoint_units: f64,
    /// Width over height of the render frame.
    pub aspect: f64,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn new(id: u64, file: String, spec: &CropSpec, label: &CropLabel) -> Self {
        ManifestRecord {
            id,
            file,
            pano_id: spec.pano_id.clone(),
            pitch_rad: label.pitch_rad,
            roll_rad: label.roll_rad,
            yaw_rad: spec.yaw_rad,
            hfov_rad: label.hfov_rad,
            xi: label.xi,
            focal_px: label.focal_px,
            midpoint_units: label.midpoint_units,
            aspect: spec.render_size.0 as f64 / spec.render_size.1 as f64,
            seed: spec.seed,
        }
    }

    /// Render-frame intrinsics implied by the record.
    ///
    /// The principal point follows from the focal length and field of
    /// view; the height from the aspect.
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let (s, c) = (self.hfov_rad / 2.0).sin_cos();
        let u0 = self.focal_px * s / (self.xi + c);
        let width = 2.0 * u0;
        Intrinsics::new(self.focal_px, self.xi, width, width / self.aspect)
    }

    pub fn orientation(&self) -> Orientation {
        Orientation::new(self.pitch_rad, self.roll_rad)
    }

    /// JSON with every float printed to 17 significant digits.
    pub fn to_json_line(&self) -> String {
        let s = |v: &str| serde_json::to_string(v).expect("string serializes");
        format!(
            "{{\"id\":{},\"file\":{},\"pano_id\":{},\"pitch_rad\":{:.16e},\"roll_rad\":{:.16e},\"yaw_rad\":{:.16e},\"hfov_rad\":{:.16e},\"xi\":{:.16e},\"focal_px\":{:.16e},\"midpoint_units\":{:.16e},\"aspect\":{:.16e},\"seed\":{}}}",
            self.id,
            s(&self.file),
            s(&self.pano_id),
            self.pitch_rad,
            self.roll_rad,
            self.yaw_rad,
            self.hfov_rad,
            self.xi,
            self.focal_px,
            self.midpoint_units,
            self.aspect,
            self.seed
        )
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        writeln!(out, "{}", r.to_json_line()).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub pano_id: String,
    pub split: Split,
}

/// Assign whole panoramas to splits: a seeded shuffle cut at the
/// configured fractions (rounded to whole panoramas).
pub fn assign_splits(pano_ids: &[String], splits: &Splits, seed: u64) -> BTreeMap<String, Split> {
    let mut ids: Vec<&String> = pano_ids.iter().collect();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(crop_seed(seed, "splits", 0));
    ids.shuffle(&mut rng);
    let total = splits.train + splits.val + splits.test;
    let n = ids.len();
    let n_train = ((splits.train / total) * n as f64).round() as usize;
    let n_val = (((splits.val / total) * n as f64).round() as usize).min(n - n_train.min(n));
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect()
}

fn list_panoramas(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut panos = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            panos.push((id, path));
        }
    }
    panos.sort();
    if panos.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no PNG panoramas in {}",
            dir.display()
        )));
    }
    Ok(panos)
}

/// Summary of a [`generate_dataset`] run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateReport {
    pub manifest: PathBuf,
    pub splits: PathBuf,
    pub records: usize,
    pub rendered: usize,
    pub reused: usize,
}

/// Crop `k` of a run uses panorama `(k / crops_per_pano) mod n` so that
/// consecutive crops share a panorama load.
fn crop_slot(k: u64, crops_per_pano: u64, n_panos: u64) -> (usize, u64) {
    let pano = (k / crops_per_pano) % n_panos;
    let index = k % crops_per_pano + crops_per_pano * (k / (crops_per_pano * n_panos));
    (pano as usize, index)
}

/// Render `count` labeled crops from the panoramas in `pano_dir`.
///
/// Writes `crops/NNNNNNN.png`, `manifest.jsonl` (sorted by id) and
/// `splits.jsonl` under `out_dir`. Records already present in an existing
/// manifest, with the same seed and an existing crop file, are reused, so
/// an interrupted run can be resumed. Crops render on the current rayon
/// pool.
pub fn generate_dataset(
    pano_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    config: &SamplingConfig,
    count: u64,
    seed: u64,
) -> Result<GenerateReport> {
    let (pano_dir, out_dir) = (pano_dir.as_ref(), out_dir.as_ref());
    let samplers = Samplers::new(config)?;
    let panos = list_panoramas(pano_dir)?;
    let crops_dir = out_dir.join(CROPS_DIR);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let splits_path = out_dir.join(SPLITS_FILE);

    let ids: Vec<String> = panos.iter().map(|(id, _)| id.clone()).collect();
    let assignment = assign_splits(&ids, &config.splits, seed);
    let split_lines: Vec<SplitRecord> = assignment
        .iter()
        .map(|(pano_id, &split)| SplitRecord {
            pano_id: pano_id.clone(),
            split,
        })
        .collect();
    write_jsonl(&splits_path, &split_lines)?;

    let mut existing: BTreeMap<u64, ManifestRecord> = if manifest_path.exists() {
        read_manifest(&manifest_path)?
            .into_iter()
            .map(|r| (r.id, r))
            .collect()
    } else {
        BTreeMap::new()
    };
    if count > 0 {
        fs::create_dir_all(&crops_dir).map_err(|e| Error::io(&crops_dir, e))?;
    }

    let cpp = config.crops_per_pano as u64;
    let n = panos.len() as u64;
    let mut jobs: BTreeMap<usize, Vec<(u64, u64)>> = BTreeMap::new();
    let mut records: Vec<ManifestRecord> = Vec::with_capacity(count as usize);
    let mut reused = 0;
    for k in 0..count {
        let (pano, index) = crop_slot(k, cpp, n);
        let file = crop_file(k);
        let keep = existing.remove(&k).filter(|r| {
            r.seed == crop_seed(seed, &panos[pano].0, index)
                && r.pano_id == panos[pano].0
                && r.file == file
                && out_dir.join(&r.file).exists()
        });
        match keep {
            Some(r) => {
                reused += 1;
                records.push(r);
            }
            None => jobs.entry(pano).or_default().push((k, index)),
        }
    }

    let mut appender = ManifestAppender::open(&manifest_path)?;
    let mut rendered = 0;
    for (&pano, crops) in &jobs {
        let (pano_id, path) = &panos[pano];
        let image = Image::load_png(path)?;
        check_panorama(&image)?;
        info!("{pano_id}: rendering {} crops", crops.len());
        let batch: Vec<ManifestRecord> = crops
            .par_iter()
            .map(|&(k, index)| {
                let spec = sample_with(&samplers, crop_seed(seed, pano_id, index), config, pano_id)?;
                let (img, label) = render_crop(&image, &spec, config.output_size)?;
                let file = crop_file(k);
                img.save_png(out_dir.join(&file), BitDepth::Eight)?;
                Ok(ManifestRecord::new(k, file, &spec, &label))
            })
            .collect::<Result<_>>()?;
        appender.append(&batch)?;
        rendered += batch.len();
        records.extend(batch);
    }
    drop(appender);

    if !existing.is_empty() {
        warn!("dropping {} manifest records beyond the requested count", existing.len());
    }
    records.sort_by_key(|r| r.id);
    write_manifest(&manifest_path, &records)?;
    Ok(GenerateReport {
        manifest: manifest_path,
        splits: splits_path,
        records: records.len(),
        rendered,
        reused,
    })
}

fn crop_file(id: u64) -> String {
    format!("{CROPS_DIR}/{id:07}.png")
}

/// Appends finished batches so progress survives an interruption.
struct ManifestAppender {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl ManifestAppender {
    fn open(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ManifestAppender {
            path: path.to_owned(),
            out: BufWriter::new(file),
        })
    }

    fn append(&mut self, records: &[ManifestRecord]) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        for r in records {
            writeln!(self.out, "{}", r.to_json_line()).map_err(io)?;
        }
        self.out.flush().map_err(io)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::json(path.display().to_string(), e))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_splits(path: impl AsRef<Path>) -> Result<BTreeMap<String, Split>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: SplitRecord = serde_json::from_str(line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        if !seen.insert(r.pano_id.clone()) {
            return Err(Error::InvalidArgument(format!("panorama {} listed twice", r.pano_id)));
        }
        out.insert(r.pano_id, r.split);
    }
    Ok(out)
}
