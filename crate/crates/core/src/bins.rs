//! Classification bins for the four calibration heads and the soft-label
//! codec used to train them.
//!
//! Bins are half-open `[lo, hi)` except the last, which is closed. The roll
//! head uses narrow bins around zero whose width grows as
//! `a - b * exp(-2 * roll^2)`.

use std::f64::consts::FRAC_PI_2;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ManifestRecord;
use crate::error::{Error, Result};

pub const UNIFORM_BINS: usize = 256;
pub const HFOV_RANGE: (f64, f64) = (0.33, 2.6);
pub const XI_RANGE: (f64, f64) = (0.0, 1.0);
pub const MIDPOINT_RANGE: (f64, f64) = (-1.6, 1.6);
pub const ROLL_WIDTH_A: f64 = 0.044;
pub const ROLL_WIDTH_B: f64 = 0.04;

/// Floor applied to predicted probabilities inside [`kl_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Roll,
    Midpoint,
    Hfov,
    Xi,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Roll, Head::Midpoint, Head::Hfov, Head::Xi];

    pub fn name(self) -> &'static str {
        match self {
            Head::Roll => "roll",
            Head::Midpoint => "midpoint",
            Head::Hfov => "hfov",
            Head::Xi => "xi",
        }
    }
}

/// Bin edges for one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBinSpec")]
pub struct BinSpec {
    parameter: Head,
    edges: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBinSpec {
    parameter: Head,
    edges: Vec<f64>,
}

impl TryFrom<RawBinSpec> for BinSpec {
    type Error = Error;

    fn try_from(raw: RawBinSpec) -> Result<Self> {
        BinSpec::from_edges(raw.parameter, raw.edges)
    }
}

impl BinSpec {
    pub fn from_edges(parameter: Head, edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidArgument("a bin spec needs at least two edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "bin edges must be finite and strictly increasing".into(),
            ));
        }
        Ok(BinSpec { parameter, edges })
    }

    pub fn uniform(parameter: Head, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "uniform bins need n > 0 and lo < hi, got n={n}, [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / n as f64;
        let mut edges: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        edges.push(hi);
        Self::from_edges(parameter, edges)
    }

    /// The default layout for `head`.
    pub fn standard(head: Head) -> Self {
        let uniform = |(lo, hi): (f64, f64)| {
            Self::uniform(head, lo, hi, UNIFORM_BINS).expect("constant ranges are valid")
        };
        match head {
            Head::Roll => construct_roll_bins(ROLL_WIDTH_A, ROLL_WIDTH_B)
                .expect("default roll constants are valid"),
            Head::Midpoint => uniform(MIDPOINT_RANGE),
            Head::Hfov => uniform(HFOV_RANGE),
            Head::Xi => uniform(XI_RANGE),
        }
    }

    pub fn parameter(&self) -> Head {
        self.parameter
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    pub fn width(&self, bin: usize) -> f64 {
        self.edges[bin + 1] - self.edges[bin]
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Index of the bin containing `value`, clamped into range.
    pub fn bin_index(&self, value: f64) -> usize {
        let n = self.len();
        if value.is_nan() {
            return 0;
        }
        let above = self.edges.partition_point(|&e| e <= value);
        above.saturating_sub(1).min(n - 1)
    }

    pub fn contains(&self, value: f64) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&value)
    }
}

/// Roll bins grown outward from zero: each width is `a - b exp(-2 e^2)`
/// evaluated at the inner edge `e`, the last edge clamped to `pi/2`, and the
/// positive half mirrored.
pub fn construct_roll_bins(a: f64, b: f64) -> Result<BinSpec> {
    if !(a > b && b > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "roll bin widths need a > b > 0, got a={a}, b={b}"
        )));
    }
    let mut positive = vec![0.0];
    let mut edge: f64 = 0.0;
    while edge < FRAC_PI_2 {
        edge += a - b * (-2.0 * edge * edge).exp();
        positive.push(edge.min(FRAC_PI_2));
    }
    let mut edges: Vec<f64> = positive.iter().rev().map(|e| -e).collect();
    edges.pop(); // -0.0; the positive half starts at 0.0
    edges.extend_from_slice(&positive);
    BinSpec::from_edges(Head::Roll, edges)
}

/// Probability vector aligned with a [`BinSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDistribution {
    probs: Vec<f64>,
}

impl BinDistribution {
    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "distribution weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("distribution weights sum to zero".into()));
        }
        Ok(BinDistribution {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Softmax of raw head outputs.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::from_weights(logits.iter().map(|l| (l - max).exp()).collect())
    }

    pub fn uniform(n: usize) -> Self {
        BinDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, bin: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[bin] = 1.0;
        BinDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub distribution: BinDistribution,
    /// The value fell outside the spec range and was clamped.
    pub clamped: bool,
}

/// Width of the bin containing `value`; the default smoothing scale.
pub fn default_sigma(value: f64, spec: &BinSpec) -> f64 {
    spec.width(spec.bin_index(value))
}

/// Encode `value` as a target distribution.
///
/// `sigma == 0` gives a one-hot vector; otherwise a Gaussian of standard
/// deviation `sigma` centered on the containing bin's center is evaluated at
/// every bin center and renormalized.
pub fn encode(value: f64, spec: &BinSpec, sigma: f64) -> Encoded {
    let clamped = !spec.contains(value);
    if clamped {
        log::warn!(
            "{} value {value} outside [{}, {}], clamped",
            spec.parameter.name(),
            spec.range().0,
            spec.range().1
        );
    }
    let bin = spec.bin_index(value);
    let distribution = if !(sigma > 0.0) {
        BinDistribution::one_hot(spec.len(), bin)
    } else {
        let mu = spec.center(bin);
        let weights = (0..spec.len())
            .map(|i| {
                let z = (spec.center(i) - mu) / sigma;
                (-0.5 * z * z).exp()
            })
            .collect();
        BinDistribution::from_weights(weights).expect("peak weight is 1")
    };
    Encoded {
        distribution,
        clamped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    #[default]
    ArgmaxCenter,
    Expectation,
}

pub fn decode(dist: &BinDistribution, spec: &BinSpec, mode: DecodeMode) -> Result<f64> {
    if dist.len() != spec.len() {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} bins, spec has {}",
            dist.len(),
            spec.len()
        )));
    }
    Ok(match mode {
        DecodeMode::ArgmaxCenter => spec.center(dist.argmax()),
        DecodeMode::Expectation => dist
            .probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * spec.center(i))
            .sum(),
    })
}

/// `KL(target || predicted)` with `0 log 0 = 0` and predictions floored at
/// [`PROB_FLOOR`].
pub fn kl_loss(target: &BinDistribution, predicted: &BinDistribution) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "KL between {} and {} bins",
            target.len(),
            predicted.len()
        )));
    }
    Ok(target
        .probs
        .iter()
        .zip(&predicted.probs)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * (t / p.max(PROB_FLOOR)).ln())
        .sum())
}

/// The four head layouts, serialized together for downstream trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSet {
    pub roll: BinSpec,
    pub midpoint: BinSpec,
    pub hfov: BinSpec,
    pub xi: BinSpec,
}

impl Default for BinSet {
    fn default() -> Self {
        BinSet {
            roll: BinSpec::standard(Head::Roll),
            midpoint: BinSpec::standard(Head::Midpoint),
            hfov: BinSpec::standard(Head::Hfov),
            xi: BinSpec::standard(Head::Xi),
        }
    }
}

impl BinSet {
    pub fn get(&self, head: Head) -> &BinSpec {
        match head {
            Head::Roll => &self.roll,
            Head::Midpoint => &self.midpoint,
            Head::Hfov => &self.hfov,
            Head::Xi => &self.xi,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bin sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: BinSet = serde_json::from_str(text).map_err(|e| Error::json("bin set", e))?;
        for head in Head::ALL {
            if set.get(head).parameter() != head {
                return Err(Error::InvalidArgument(format!(
                    "bin set entry {} declares parameter {}",
                    head.name(),
                    set.get(head).parameter().name()
                )));
            }
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

/// Encoded targets for one labeled crop, one entry per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTargets {
    pub id: u64,
    pub roll: HeadTarget,
    pub midpoint: HeadTarget,
    pub hfov: HeadTarget,
    pub xi: HeadTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTarget {
    pub bin: usize,
    pub sigma: f64,
    pub probs: Vec<f64>,
}

/// Targets for a (roll, midpoint, hfov, xi) label with the default
/// one-bin-width smoothing.
pub fn encode_targets(id: u64, values: [f64; 4], bins: &BinSet) -> HeadTargets {
    let target = |head: Head, value: f64| {
        let spec = bins.get(head);
        let sigma = default_sigma(value, spec);
        let enc = encode(value, spec, sigma);
        HeadTarget {
            bin: spec.bin_index(value),
            sigma,
            probs: enc.distribution.probs,
        }
    };
    HeadTargets {
        id,
        roll: target(Head::Roll, values[0]),
        midpoint: target(Head::Midpoint, values[1]),
        hfov: target(Head::Hfov, values[2]),
        xi: target(Head::Xi, values[3]),
    }
}

/// Targets for every manifest record, in manifest order.
pub fn encode_manifest(records: &[ManifestRecord], bins: &BinSet) -> Vec<HeadTargets> {
    records
        .iter()
        .map(|r| encode_targets(r.id, [r.roll_rad, r.midpoint_units, r.hfov_rad, r.xi], bins))
        .collect()
}

/// One [`HeadTargets`] object per line.
pub fn write_targets(path: impl AsRef<Path>, targets: &[HeadTargets]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for t in targets {
        let line = serde_json::to_string(t).map_err(|e| Error::json("targets", e))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_targets(path: impl AsRef<Path>) -> Result<Vec<HeadTargets>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e)))
        .collect()
}
