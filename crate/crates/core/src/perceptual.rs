//! Perceptual error measure.
//!
//! Human judgments ("which of the two insertions looks right?") are binned
//! on a 7x7 grid over ground-truth value and signed error. A cell rate of
//! 0.5 means the error went unnoticed; 1.0 means it was always detected.
//! The fitted surface is evaluated by bilinear interpolation between cell
//! centers and is used to score calibration methods.
//!
//! Angles are in radians; `xi` is unitless.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cells per axis.
pub const GRID: usize = 7;
pub const DEFAULT_MIN_COUNT: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Pitch,
    Roll,
    Hfov,
    Xi,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [Parameter::Pitch, Parameter::Roll, Parameter::Hfov, Parameter::Xi];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::Pitch => "pitch",
            Parameter::Roll => "roll",
            Parameter::Hfov => "hfov",
            Parameter::Xi => "xi",
        }
    }

    pub fn is_angle(self) -> bool {
        !matches!(self, Parameter::Xi)
    }

    /// Approximate `(value_range, error_range)` of the study data, in
    /// radians for angles.
    pub fn default_ranges(self) -> ((f64, f64), (f64, f64)) {
        let r = f64::to_radians;
        match self {
            Parameter::Pitch => ((r(-30.0), r(30.0)), (r(-30.0), r(30.0))),
            Parameter::Roll => ((r(-30.0), r(30.0)), (r(-20.0), r(20.0))),
            Parameter::Hfov => ((r(20.0), r(120.0)), (r(-55.0), r(55.0))),
            Parameter::Xi => ((0.0, 1.0), (-1.0, 1.0)),
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Parameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pitch" => Ok(Parameter::Pitch),
            "roll" => Ok(Parameter::Roll),
            "hfov" => Ok(Parameter::Hfov),
            "xi" => Ok(Parameter::Xi),
            other => Err(Error::InvalidArgument(format!("unknown parameter {other:?}"))),
        }
    }
}

/// One judgment, or several aggregated into a rate.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentRecord {
    pub parameter: Parameter,
    pub gt_value: f64,
    /// Perturbed minus ground truth.
    pub error: f64,
    /// Fraction of judgments that picked the ground truth.
    pub rate: f64,
    pub count: u32,
    pub image_id: String,
}

impl JudgmentRecord {
    pub fn single(
        parameter: Parameter,
        gt_value: f64,
        error: f64,
        chose_gt: bool,
        image_id: impl Into<String>,
    ) -> Self {
        JudgmentRecord {
            parameter,
            gt_value,
            error,
            rate: if chose_gt { 1.0 } else { 0.0 },
            count: 1,
            image_id: image_id.into(),
        }
    }

    pub fn aggregated(
        parameter: Parameter,
        gt_value: f64,
        error: f64,
        rate: f64,
        count: u32,
        image_id: impl Into<String>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("rate {rate} outside [0, 1]")));
        }
        if count == 0 {
            return Err(Error::InvalidArgument("record count must be at least 1".into()));
        }
        Ok(JudgmentRecord {
            parameter,
            gt_value,
            error,
            rate,
            count,
            image_id: image_id.into(),
        })
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    parameter: String,
    gt_value: f64,
    error: f64,
    chose_gt: String,
    image_id: String,
}

fn parse_chose_gt(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(1.0),
        "0" | "false" | "no" => Ok(0.0),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|r| (0.0..=1.0).contains(r))
            .ok_or_else(|| Error::InvalidArgument(format!("chose_gt must be a boolean or a rate, got {other:?}"))),
    }
}

/// Read judgments from CSV with header
/// `parameter,gt_value,error,chose_gt,image_id`.
///
/// `chose_gt` is a boolean (`true`/`false`/`1`/`0`) or a rate in `[0, 1]`.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<JudgmentRecord>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(csv_err)?;
        out.push(JudgmentRecord {
            parameter: row.parameter.parse()?,
            gt_value: row.gt_value,
            error: row.error,
            rate: parse_chose_gt(&row.chose_gt)?,
            count: 1,
            image_id: row.image_id,
        });
    }
    Ok(out)
}

pub fn write_csv(path: impl AsRef<Path>, records: &[JudgmentRecord]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer
        .write_record(["parameter", "gt_value", "error", "chose_gt", "image_id"])
        .map_err(csv_err)?;
    for r in records {
        for _ in 0..r.count {
            writer
                .write_record([
                    r.parameter.name().to_string(),
                    r.gt_value.to_string(),
                    r.error.to_string(),
                    r.rate.to_string(),
                    r.image_id.clone(),
                ])
                .map_err(csv_err)?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn uniform_edges(lo: f64, hi: f64) -> Vec<f64> {
    (0..=GRID)
        .map(|i| {
            if i == GRID {
                hi
            } else {
                lo + (hi - lo) * i as f64 / GRID as f64
            }
        })
        .collect()
}

fn validate_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} range [{lo}, {hi}] is empty")))
    }
}

/// Half-open cell index with the last cell closed; `None` outside.
fn cell_of(edges: &[f64], x: f64) -> Option<usize> {
    let (lo, hi) = (edges[0], edges[GRID]);
    if !(lo..=hi).contains(&x) {
        return None;
    }
    Some((edges.partition_point(|&e| e <= x) - 1).min(GRID - 1))
}

/// Detection rates on a 7x7 grid. Rows index the ground-truth value and
/// columns the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSurface")]
pub struct PerceptualSurface {
    parameter: Parameter,
    value_edges: Vec<f64>,
    error_edges: Vec<f64>,
    /// `None` where the cell is masked.
    rates: Vec<Vec<Option<f64>>>,
    /// `true` where the cell is masked.
    mask: Vec<Vec<bool>>,
    counts: Vec<Vec<u64>>,
}

#[derive(Deserialize)]
struct RawSurface {
    parameter: Parameter,
    value_edges: Vec<f64>,
    error_edges: Vec<f64>,
    rates: Vec<Vec<Option<f64>>>,
    mask: Vec<Vec<bool>>,
    #[serde(default)]
    counts: Option<Vec<Vec<u64>>>,
}

impl TryFrom<RawSurface> for PerceptualSurface {
    type Error = Error;

    fn try_from(raw: RawSurface) -> Result<Self> {
        let square = |n: usize| n == GRID;
        let edges_ok = |e: &[f64]| square(e.len() - 1) && e.windows(2).all(|w| w[0] < w[1]);
        if raw.value_edges.len() != GRID + 1 || raw.error_edges.len() != GRID + 1 {
            return Err(Error::InvalidArgument(format!("surface needs {} edges per axis", GRID + 1)));
        }
        if !edges_ok(&raw.value_edges) || !edges_ok(&raw.error_edges) {
            return Err(Error::InvalidArgument("surface edges must be strictly increasing".into()));
        }
        if !square(raw.rates.len())
            || !square(raw.mask.len())
            || raw.rates.iter().any(|r| !square(r.len()))
            || raw.mask.iter().any(|r| !square(r.len()))
        {
            return Err(Error::InvalidArgument(format!("surface grid must be {GRID}x{GRID}")));
        }
        for (i, (rates, mask)) in raw.rates.iter().zip(&raw.mask).enumerate() {
            for (j, (rate, &masked)) in rates.iter().zip(mask).enumerate() {
                match (rate, masked) {
                    (Some(r), false) if (0.0..=1.0).contains(r) => {}
                    (None, true) => {}
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "surface cell ({i}, {j}) has inconsistent rate/mask"
                        )))
                    }
                }
            }
        }
        let counts = raw.counts.unwrap_or_else(|| vec![vec![0; GRID]; GRID]);
        if !square(counts.len()) || counts.iter().any(|r| !square(r.len())) {
            return Err(Error::InvalidArgument(format!("surface counts must be {GRID}x{GRID}")));
        }
        Ok(PerceptualSurface {
            parameter: raw.parameter,
            value_edges: raw.value_edges,
            error_edges: raw.error_edges,
            rates: raw.rates,
            mask: raw.mask,
            counts,
        })
    }
}

/// Result of [`PerceptualSurface::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detectability {
    pub value: f64,
    /// The query's neighborhood was fully masked and the nearest valid
    /// cell was used instead.
    pub degraded: bool,
}

impl PerceptualSurface {
    /// Surface from explicit edges and rates; `None` marks a masked cell.
    pub fn from_rates(
        parameter: Parameter,
        value_range: (f64, f64),
        error_range: (f64, f64),
        rates: [[Option<f64>; GRID]; GRID],
    ) -> Result<Self> {
        validate_range("value", value_range)?;
        validate_range("error", error_range)?;
        RawSurface {
            parameter,
            value_edges: uniform_edges(value_range.0, value_range.1),
            error_edges: uniform_edges(error_range.0, error_range.1),
            rates: rates.iter().map(|r| r.to_vec()).collect(),
            mask: rates.iter().map(|r| r.iter().map(Option::is_none).collect()).collect(),
            counts: None,
        }
        .try_into()
    }

    pub fn parameter(&self) -> Parameter {
        self.parameter
    }

    pub fn value_edges(&self) -> &[f64] {
        &self.value_edges
    }

    pub fn error_edges(&self) -> &[f64] {
        &self.error_edges
    }

    pub fn rate(&self, value_bin: usize, error_bin: usize) -> Option<f64> {
        self.rates[value_bin][error_bin]
    }

    pub fn count(&self, value_bin: usize, error_bin: usize) -> u64 {
        self.counts[value_bin][error_bin]
    }

    pub fn value_center(&self, bin: usize) -> f64 {
        0.5 * (self.value_edges[bin] + self.value_edges[bin + 1])
    }

    pub fn error_center(&self, bin: usize) -> f64 {
        0.5 * (self.error_edges[bin] + self.error_edges[bin + 1])
    }

    pub fn unmasked_cells(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| !m).count()
    }

    /// Detection probability for an `error` made at ground truth
    /// `gt_value`.
    ///
    /// Bilinear between cell centers, renormalized over the unmasked
    /// corners. Queries outside the grid clamp to the outermost centers.
    pub fn evaluate(&self, gt_value: f64, error: f64) -> Result<Detectability> {
        if self.unmasked_cells() == 0 {
            return Err(Error::NoData);
        }
        let (i0, i1, ti) = self.bracket(gt_value, |k| self.value_center(k));
        let (j0, j1, tj) = self.bracket(error, |k| self.error_center(k));
        let corners = [
            (i0, j0, (1.0 - ti) * (1.0 - tj)),
            (i1, j0, ti * (1.0 - tj)),
            (i0, j1, (1.0 - ti) * tj),
            (i1, j1, ti * tj),
        ];
        let (mut sum, mut weight) = (0.0, 0.0);
        for (i, j, w) in corners {
            if let (Some(r), true) = (self.rates[i][j], w > 0.0) {
                sum += w * r;
                weight += w;
            }
        }
        if weight > 0.0 {
            return Ok(Detectability {
                value: (sum / weight).clamp(0.0, 1.0),
                degraded: false,
            });
        }
        // Fractional cell coordinates of the query, for a nearest search
        // that does not depend on axis units.
        let fi = i0 as f64 + ti * (i1 - i0) as f64;
        let fj = j0 as f64 + tj * (j1 - j0) as f64;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..GRID {
            for j in 0..GRID {
                if let Some(r) = self.rates[i][j] {
                    let d = (i as f64 - fi).powi(2) + (j as f64 - fj).powi(2);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, r));
                    }
                }
            }
        }
        let (_, value) = best.ok_or(Error::NoData)?;
        Ok(Detectability {
            value,
            degraded: true,
        })
    }

    /// Lower/upper center indices and the interpolation weight of the
    /// upper one.
    fn bracket(&self, x: f64, center: impl Fn(usize) -> f64) -> (usize, usize, f64) {
        if x.is_nan() || x <= center(0) {
            return (0, 0, 0.0);
        }
        if x >= center(GRID - 1) {
            return (GRID - 1, GRID - 1, 0.0);
        }
        let k = (0..GRID - 1)
            .find(|&k| x < center(k + 1))
            .expect("x is below the last center");
        let (c0, c1) = (center(k), center(k + 1));
        (k, k + 1, (x - c0) / (c1 - c0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surface serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("perceptual surface", e))
    }
}

/// Bin `records` for `parameter` into a 7x7 surface.
///
/// Records for other parameters or outside the ranges are ignored. Cells
/// holding fewer than `min_count` judgments are masked.
pub fn fit_surface(
    records: &[JudgmentRecord],
    parameter: Parameter,
    value_range: (f64, f64),
    error_range: (f64, f64),
    min_count: u32,
) -> Result<PerceptualSurface> {
    validate_range("value", value_range)?;
    validate_range("error", error_range)?;
    let value_edges = uniform_edges(value_range.0, value_range.1);
    let error_edges = uniform_edges(error_range.0, error_range.1);
    let mut sums = [[0.0f64; GRID]; GRID];
    let mut counts = vec![vec![0u64; GRID]; GRID];
    for r in records.iter().filter(|r| r.parameter == parameter) {
        if let (Some(i), Some(j)) = (cell_of(&value_edges, r.gt_value), cell_of(&error_edges, r.error)) {
            sums[i][j] += r.rate * r.count as f64;
            counts[i][j] += r.count as u64;
        }
    }
    let min_count = min_count.max(1) as u64;
    let rates: Vec<Vec<Option<f64>>> = (0..GRID)
        .map(|i| {
            (0..GRID)
                .map(|j| (counts[i][j] >= min_count).then(|| sums[i][j] / counts[i][j] as f64))
                .collect()
        })
        .collect();
    let mask: Vec<Vec<bool>> = rates.iter().map(|r| r.iter().map(Option::is_none).collect()).collect();
    if mask.iter().flatten().all(|&m| m) {
        return Err(Error::NoData);
    }
    Ok(PerceptualSurface {
        parameter,
        value_edges,
        error_edges,
        rates,
        mask,
        counts,
    })
}

/// Surfaces keyed by parameter, serialized as one JSON array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceSet {
    surfaces: BTreeMap<Parameter, PerceptualSurface>,
}

impl SurfaceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: PerceptualSurface) {
        self.surfaces.insert(surface.parameter, surface);
    }

    pub fn get(&self, parameter: Parameter) -> Option<&PerceptualSurface> {
        self.surfaces.get(&parameter)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PerceptualSurface> {
        self.surfaces.values()
    }

    pub fn to_json(&self) -> String {
        let list: Vec<_> = self.surfaces.values().collect();
        serde_json::to_string_pretty(&list).expect("surfaces serialize")
    }

    /// Accepts a single surface object or an array of them.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::json("perceptual surfaces", e))?;
        let list: Vec<PerceptualSurface> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|s| vec![s])
        }
        .map_err(|e| Error::json("perceptual surfaces", e))?;
        let mut set = SurfaceSet::new();
        for s in list {
            set.insert(s);
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl FromIterator<PerceptualSurface> for SurfaceSet {
    fn from_iter<I: IntoIterator<Item = PerceptualSurface>>(iter: I) -> Self {
        let mut set = SurfaceSet::new();
        for s in iter {
            set.insert(s);
        }
        set
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    pub count: usize,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Summary {
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            count: sorted.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalBin {
    pub error_lo: f64,
    pub error_hi: f64,
    /// Spread of per-image rates; `None` for an empty bin.
    pub summary: Option<Summary>,
}

/// Sensitivity as a function of error alone.
///
/// Judgments are grouped per image within each error bin; each image
/// contributes its own rate, and the bin reports the spread across images.
pub fn marginal_sensitivity(
    records: &[JudgmentRecord],
    parameter: Parameter,
    error_range: (f64, f64),
    n_bins: usize,
) -> Result<Vec<MarginalBin>> {
    validate_range("error", error_range)?;
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
    }
    let (lo, hi) = error_range;
    let width = (hi - lo) / n_bins as f64;
    let mut per_image: Vec<BTreeMap<&str, (f64, u64)>> = vec![BTreeMap::new(); n_bins];
    for r in records.iter().filter(|r| r.parameter == parameter) {
        if !(lo..=hi).contains(&r.error) {
            continue;
        }
        let bin = (((r.error - lo) / width) as usize).min(n_bins - 1);
        let slot = per_image[bin].entry(r.image_id.as_str()).or_insert((0.0, 0));
        slot.0 += r.rate * r.count as f64;
        slot.1 += r.count as u64;
    }
    Ok(per_image
        .iter()
        .enumerate()
        .map(|(b, images)| {
            let rates: Vec<f64> = images.values().map(|&(s, n)| s / n as f64).collect();
            MarginalBin {
                error_lo: lo + b as f64 * width,
                error_hi: if b + 1 == n_bins { hi } else { lo + (b + 1) as f64 * width },
                summary: Summary::of(&rates),
            }
        })
        .collect())
}

/// One estimate to be scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub parameter: Parameter,
    pub gt_value: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterScore {
    #[serde(flatten)]
    pub summary: Summary,
    /// Evaluations that fell back to the nearest valid cell.
    pub degraded: usize,
}

/// Perceived severity of a method's errors, per parameter. Lower is
/// better; 0.5 means indistinguishable from the ground truth.
pub fn score_method(
    surfaces: &SurfaceSet,
    estimates: &[Estimate],
) -> Result<BTreeMap<Parameter, ParameterScore>> {
    let mut values: BTreeMap<Parameter, (Vec<f64>, usize)> = BTreeMap::new();
    for e in estimates {
        let surface = surfaces
            .get(e.parameter)
            .ok_or_else(|| Error::MissingSurface(e.parameter.name().into()))?;
        let d = surface.evaluate(e.gt_value, e.estimate - e.gt_value)?;
        let slot = values.entry(e.parameter).or_default();
        slot.0.push(d.value);
        slot.1 += d.degraded as usize;
    }
    Ok(values
        .into_iter()
        .map(|(p, (v, degraded))| {
            let summary = Summary::of(&v).expect("at least one estimate per entry");
            (p, ParameterScore { summary, degraded })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const VR: (f64, f64) = (0.0, 7.0);
    const ER: (f64, f64) = (-7.0, 7.0);

    fn rec(v: f64, e: f64, rate: f64, n: u32) -> JudgmentRecord {
        JudgmentRecord::aggregated(Parameter::Roll, v, e, rate, n, "img").unwrap()
    }

    fn grid(mut f: impl FnMut(usize, usize) -> Option<f64>) -> [[Option<f64>; GRID]; GRID] {
        std::array::from_fn(|i| std::array::from_fn(|j| f(i, j)))
    }

    #[test]
    fn constant_data_gives_constant_cells() {
        let mut records = Vec::new();
        for i in 0..GRID {
            for j in 0..GRID {
                records.push(rec(i as f64 + 0.5, 2.0 * j as f64 - 6.0, 0.75, 8));
            }
        }
        let s = fit_surface(&records, Parameter::Roll, VR, ER, 5).unwrap();
        assert_eq!(s.unmasked_cells(), GRID * GRID);
        for i in 0..GRID {
            for j in 0..GRID {
                assert_eq!(s.rate(i, j), Some(0.75));
            }
        }
        let d = s.evaluate(3.3, -1.7).unwrap();
        assert!((d.value - 0.75).abs() < 1e-15 && !d.degraded);
    }

    #[test]
    fn records_in_one_cell() {
        let records = vec![rec(1.2, 0.3, 1.0, 3), rec(1.7, 0.9, 0.0, 3)];
        let s = fit_surface(&records, Parameter::Roll, VR, ER, 5).unwrap();
        assert_eq!(s.unmasked_cells(), 1);
        assert_eq!(s.rate(1, 3), Some(0.5));
        assert_eq!(s.count(1, 3), 6);
        // The only valid cell answers every query, flagged as degraded
        // away from its neighborhood.
        let far = s.evaluate(6.5, 6.0).unwrap();
        assert_eq!(far, Detectability { value: 0.5, degraded: true });
    }

    #[test]
    fn sparse_cells_are_masked_and_empty_fails() {
        let records = vec![rec(1.2, 0.3, 1.0, 4)];
        assert!(matches!(
            fit_surface(&records, Parameter::Roll, VR, ER, 5),
            Err(Error::NoData)
        ));
        // Other parameters do not count.
        assert!(matches!(
            fit_surface(&records, Parameter::Pitch, VR, ER, 1),
            Err(Error::NoData)
        ));
    }

    #[test]
    fn exact_at_centers_and_bilinear_between() {
        let f = |i: usize, j: usize| Some(0.5 + 0.06 * i as f64 + 0.01 * (j * j % 5) as f64);
        let s = PerceptualSurface::from_rates(Parameter::Pitch, VR, ER, grid(f)).unwrap();
        for i in 0..GRID {
            for j in 0..GRID {
                let d = s.evaluate(s.value_center(i), s.error_center(j)).unwrap();
                assert_eq!(d.value, f(i, j).unwrap());
            }
        }
        let mid = s
            .evaluate(
                0.5 * (s.value_center(2) + s.value_center(3)),
                0.5 * (s.error_center(4) + s.error_center(5)),
            )
            .unwrap();
        let mean = (f(2, 4).unwrap() + f(3, 4).unwrap() + f(2, 5).unwrap() + f(3, 5).unwrap()) / 4.0;
        assert!((mid.value - mean).abs() < 1e-15);
    }

    #[test]
    fn masked_corners_are_renormalized() {
        let s = PerceptualSurface::from_rates(
            Parameter::Xi,
            VR,
            ER,
            grid(|i, j| if (i, j) == (3, 3) { None } else { Some(0.6 + 0.01 * i as f64) }),
        )
        .unwrap();
        let d = s
            .evaluate(0.5 * (s.value_center(3) + s.value_center(4)), s.error_center(3))
            .unwrap();
        assert_eq!(d, Detectability { value: 0.64, degraded: false });
        let d = s.evaluate(s.value_center(3), s.error_center(3)).unwrap();
        assert!(d.degraded);
    }

    #[test]
    fn queries_clamp_outside_grid() {
        let s = PerceptualSurface::from_rates(
            Parameter::Hfov,
            VR,
            ER,
            grid(|i, j| Some(0.5 + 0.07 * i as f64 * (j as f64 / 6.0))),
        )
        .unwrap();
        let corner = s.evaluate(100.0, 100.0).unwrap().value;
        assert_eq!(corner, s.rate(6, 6).unwrap());
        let low = s.evaluate(-100.0, -100.0).unwrap().value;
        assert_eq!(low, s.rate(0, 0).unwrap());
    }

    #[test]
    fn binomial_recovery_within_three_sigma() {
        let r = |v: f64, e: f64| 0.5 + 0.45 * (e.abs() / 7.0) * (1.0 - 0.3 * v / 7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut records = Vec::new();
        let probe = PerceptualSurface::from_rates(Parameter::Roll, VR, ER, grid(|_, _| Some(0.5))).unwrap();
        for i in 0..GRID {
            for j in 0..GRID {
                let (v, e) = (probe.value_center(i), probe.error_center(j));
                let hits = (0..n).filter(|_| rng.random::<f64>() < r(v, e)).count();
                records.push(rec(v, e, hits as f64 / n as f64, n as u32));
            }
        }
        let s = fit_surface(&records, Parameter::Roll, VR, ER, 5).unwrap();
        let mut zs = Vec::new();
        for i in 0..GRID {
            for j in 0..GRID {
                let p = r(s.value_center(i), s.error_center(j));
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                let z = (s.rate(i, j).unwrap() - p) / sigma;
                assert!(z.abs() <= 3.0, "cell ({i}, {j}) is {z:.2} sigma off");
                zs.push(z);
            }
        }
        // The cell means are unbiased with binomial spread.
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / zs.len() as f64).sqrt();
        assert!(mean.abs() < 0.5 && (0.6..1.4).contains(&sd), "z mean {mean}, sd {sd}");
    }

    #[test]
    fn marginal_single_image_per_bin() {
        let records = vec![rec(1.0, -5.0, 0.9, 4), rec(1.0, 5.0, 0.7, 4)];
        let bins = marginal_sensitivity(&records, Parameter::Roll, ER, 2).unwrap();
        let a = bins[0].summary.unwrap();
        assert_eq!((a.median, a.q1, a.q3), (0.9, 0.9, 0.9));
        assert_eq!(bins[1].summary.unwrap().median, 0.7);
    }

    #[test]
    fn marginal_is_per_image_and_symmetric() {
        let mut records = Vec::new();
        for img in 0..5 {
            let rate = 0.5 + 0.1 * img as f64;
            for e in [-6.0f64, -2.0, 2.0, 6.0] {
                let r = if e.abs() > 4.0 { rate } else { 0.5 };
                let n = if img == 0 { 50 } else { 2 };
                records.push(JudgmentRecord::aggregated(Parameter::Pitch, 0.0, e, r, n, format!("i{img}")).unwrap());
            }
        }
        let bins = marginal_sensitivity(&records, Parameter::Pitch, ER, 4).unwrap();
        let med: Vec<f64> = bins.iter().map(|b| b.summary.unwrap().median).collect();
        for (m, want) in med.iter().zip([0.7, 0.5, 0.5, 0.7]) {
            assert!((m - want).abs() < 1e-12);
        }
        let outer = bins[0].summary.unwrap();
        assert_eq!(outer.count, 5);
        assert!((outer.q1 - 0.6).abs() < 1e-12 && (outer.q3 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn quantile_type_seven() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.25), 1.75);
        assert_eq!(quantile(&s, 0.75), 3.25);
    }

    #[test]
    fn score_zero_error_on_half_surface() {
        let s = PerceptualSurface::from_rates(
            Parameter::Roll,
            VR,
            ER,
            grid(|_, j| Some(if j == 3 { 0.5 } else { 0.9 })),
        )
        .unwrap();
        let set: SurfaceSet = [s].into_iter().collect();
        let est: Vec<Estimate> = (0..20)
            .map(|k| Estimate { parameter: Parameter::Roll, gt_value: k as f64 * 0.3, estimate: k as f64 * 0.3 })
            .collect();
        let out = score_method(&set, &est).unwrap();
        let roll = &out[&Parameter::Roll].summary;
        assert_eq!((roll.median, roll.q1, roll.q3, roll.mean), (0.5, 0.5, 0.5, 0.5));
        let missing = [Estimate { parameter: Parameter::Xi, gt_value: 0.1, estimate: 0.2 }];
        assert!(matches!(score_method(&set, &missing), Err(Error::MissingSurface(p)) if p == "xi"));
    }

    #[test]
    fn surface_json_round_trip() {
        let records: Vec<_> = (0..200)
            .map(|k| rec((k % 7) as f64 + 0.2, (k % 13) as f64 - 6.0, (k % 3) as f64 / 2.0, 2))
            .collect();
        let s = fit_surface(&records, Parameter::Roll, VR, ER, 5).unwrap();
        let back = PerceptualSurface::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let set = SurfaceSet::from_json(&s.to_json()).unwrap();
        assert_eq!(set.get(Parameter::Roll), Some(&s));
        let bad = s.to_json().replacen("null", "0.5", 1);
        assert!(PerceptualSurface::from_json(&bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.csv");
        let records = vec![
            JudgmentRecord::single(Parameter::Hfov, 1.1, -0.2, true, "a"),
            JudgmentRecord::single(Parameter::Xi, 0.4, 0.3, false, "b"),
        ];
        write_csv(&path, &records).unwrap();
        assert_eq!(read_csv(&path).unwrap(), records);
        std::fs::write(&path, "parameter,gt_value,error,chose_gt,image_id\nroll,0.1,0.2,maybe,x\n").unwrap();
        assert!(read_csv(&path).is_err());
    }

    proptest! {
        #[test]
        fn fit_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut records: Vec<_> = (0..300)
                .map(|_| rec(rng.random_range(0.0..7.0), rng.random_range(-7.0..7.0), rng.random_range(0..=1) as f64, 1))
                .collect();
            let a = fit_surface(&records, Parameter::Roll, VR, ER, 2);
            records.reverse();
            let k = rng.random_range(0..records.len());
            records.rotate_left(k);
            let b = fit_surface(&records, Parameter::Roll, VR, ER, 2);
            prop_assert_eq!(a.ok(), b.ok());
        }

        #[test]
        fn evaluate_stays_in_cell_range(v in -2.0f64..9.0, e in -9.0f64..9.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rates = grid(|_, _| rng.random_bool(0.8).then(|| rng.random_range(0.5..1.0)));
            if let Ok(s) = PerceptualSurface::from_rates(Parameter::Roll, VR, ER, rates) {
                if s.unmasked_cells() > 0 {
                    let d = s.evaluate(v, e).unwrap();
                    prop_assert!((0.5..1.0).contains(&d.value));
                }
            }
        }
    }
}
