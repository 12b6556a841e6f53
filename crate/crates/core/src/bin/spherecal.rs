//! Command-line front end for the `spherecal` library.
//!
//! Flags take degrees where the name says so; everything else is radians,
//! pixels or unitless. `--json` prints one JSON object on stdout. Exit
//! codes: 0 success, 2 invalid input, 1 runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use spherecal::bins::{self, BinSet};
use spherecal::camera::{horizon_endpoints, Intrinsics, Orientation};
use spherecal::dataset::{self, SamplingConfig};
use spherecal::horizon::{build_index, draw_horizon, RetrievalIndex};
use spherecal::params::{resolve, ParamQuery};
use spherecal::perceptual::{self, Estimate, Parameter, SurfaceSet};
use spherecal::undistort::{default_target, undistort, TargetLens};
use spherecal::warp::{BitDepth, Image};
use spherecal::{Error, Result};

#[derive(Parser)]
#[command(name = "spherecal", version, about = "Unified spherical camera model toolkit")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CALIB_THREADS")]
    threads: Option<usize>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert among focal length, field of view, xi, pitch and midpoint.
    Params(ParamsArgs),
    /// Synthesize labeled crops from panoramas.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Rectify a distorted image to a pinhole image.
    Undistort(UndistortArgs),
    /// Horizon overlays, boundary features and retrieval.
    #[command(subcommand)]
    Horizon(HorizonCommand),
    /// Fit, evaluate and apply perceptual error surfaces.
    #[command(subcommand)]
    Perceptual(PerceptualCommand),
    /// Classification bins and encoded training targets.
    #[command(subcommand)]
    Bins(BinsCommand),
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    width: f64,
    #[arg(long)]
    height: Option<f64>,
    #[arg(long)]
    focal_px: Option<f64>,
    #[arg(long)]
    hfov_deg: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pitch_deg: Option<f64>,
    /// Horizon midpoint in normalized units (top +1, bottom -1).
    #[arg(long, allow_hyphen_values = true)]
    midpoint: Option<f64>,
}

#[derive(Subcommand)]
enum DatasetCommand {
    Generate {
        #[arg(long)]
        panos: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampling configuration JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the default sampling configuration.
    Config,
}

/// Lens of a distorted image: xi plus a focal length or field of view.
#[derive(Args, Clone)]
struct LensArgs {
    #[arg(long)]
    xi: f64,
    #[arg(long, conflicts_with = "hfov_deg", required_unless_present = "hfov_deg")]
    focal_px: Option<f64>,
    #[arg(long)]
    hfov_deg: Option<f64>,
}

impl LensArgs {
    fn intrinsics(&self, width: f64, height: f64) -> Result<Intrinsics> {
        match (self.focal_px, self.hfov_deg) {
            (Some(f), _) => Intrinsics::new(f, self.xi, width, height),
            (None, Some(h)) => Intrinsics::from_hfov(h.to_radians(), self.xi, width, height),
            (None, None) => Err(Error::InvalidArgument("need --focal-px or --hfov-deg".into())),
        }
    }
}

#[derive(Args)]
struct UndistortArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    lens: LensArgs,
    #[arg(long, conflicts_with = "target_focal_px")]
    target_hfov_deg: Option<f64>,
    #[arg(long)]
    target_focal_px: Option<f64>,
    #[arg(long)]
    target_width: Option<u32>,
    #[arg(long)]
    target_height: Option<u32>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Depth::Eight)]
    bit_depth: Depth,
}

#[derive(Clone, Copy, ValueEnum)]
enum Depth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<Depth> for BitDepth {
    fn from(d: Depth) -> Self {
        match d {
            Depth::Eight => BitDepth::Eight,
            Depth::Sixteen => BitDepth::Sixteen,
        }
    }
}

#[derive(Args, Clone)]
struct PoseArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pitch_deg: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    roll_deg: f64,
}

impl PoseArgs {
    fn orientation(&self) -> Orientation {
        Orientation::new(self.pitch_deg.to_radians(), self.roll_deg.to_radians())
    }
}

#[derive(Subcommand)]
enum HorizonCommand {
    /// Overlay the horizon on an image.
    Draw {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        lens: LensArgs,
        #[command(flatten)]
        pose: PoseArgs,
        #[arg(long, default_value_t = 2.0)]
        thickness: f64,
        /// One value per channel in [0, 1], comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,0,0")]
        color: Vec<f32>,
    },
    /// Horizon height at the left and right image boundaries.
    Endpoints {
        #[arg(long)]
        width: f64,
        #[arg(long)]
        height: f64,
        #[command(flatten)]
        lens: LensArgs,
        #[command(flatten)]
        pose: PoseArgs,
    },
    /// Build a retrieval index from a manifest.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest images by horizon feature.
    Retrieve {
        /// Index JSONL built by `horizon index`.
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        index: Option<PathBuf>,
        /// Build the index on the fly from a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true, requires = "v_right")]
        v_left: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        v_right: Option<f64>,
        /// Query camera, used when no feature is given.
        #[arg(long)]
        width: Option<f64>,
        #[arg(long)]
        height: Option<f64>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        focal_px: Option<f64>,
        #[arg(long)]
        hfov_deg: Option<f64>,
        #[command(flatten)]
        pose: PoseArgs,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum PerceptualCommand {
    /// Fit one surface per parameter present in the judgments CSV.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        surface: PathBuf,
        /// Restrict to one parameter.
        #[arg(long)]
        parameter: Option<String>,
        #[arg(long, default_value_t = perceptual::DEFAULT_MIN_COUNT)]
        min_count: u32,
        /// Value range in degrees (xi: unitless), as lo,hi.
        #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
        value_range: Option<Vec<f64>>,
        /// Error range in degrees (xi: unitless), as lo,hi.
        #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
        error_range: Option<Vec<f64>>,
    },
    /// Detection probability of one error.
    Eval {
        #[arg(long)]
        surface: PathBuf,
        #[arg(long)]
        parameter: String,
        /// Ground truth in degrees (xi: unitless).
        #[arg(long, allow_hyphen_values = true)]
        gt_value: f64,
        /// Signed error in degrees (xi: unitless).
        #[arg(long, allow_hyphen_values = true)]
        error: f64,
    },
    /// Score estimates from a CSV with header `parameter,gt_value,estimate`
    /// (radians for angles).
    Score {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        surface: PathBuf,
    },
}

#[derive(Subcommand)]
enum BinsCommand {
    /// Write the four head bin layouts as JSON.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode manifest labels into per-head target distributions (JSONL).
    Encode {
        #[arg(long)]
        manifest: PathBuf,
        /// Bin layouts; defaults to the standard ones.
        #[arg(long)]
        bins: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command, cli.json) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn emit(json: bool, value: serde_json::Value, text: impl FnOnce() -> String) {
    if json {
        println!("{value}");
    } else {
        println!("{}", text());
    }
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("output serializes")
}

fn run(command: Command, json: bool) -> Result<()> {
    match command {
        Command::Params(a) => params(a, json),
        Command::Dataset(c) => dataset_cmd(c, json),
        Command::Undistort(a) => undistort_cmd(a, json),
        Command::Horizon(c) => horizon_cmd(c, json),
        Command::Perceptual(c) => perceptual_cmd(c, json),
        Command::Bins(c) => bins_cmd(c, json),
    }
}

fn params(a: ParamsArgs, json: bool) -> Result<()> {
    let r = resolve(&ParamQuery {
        width: a.width,
        height: a.height,
        focal_px: a.focal_px,
        hfov_rad: a.hfov_deg.map(f64::to_radians),
        xi: a.xi,
        pitch_rad: a.pitch_deg.map(f64::to_radians),
        midpoint_units: a.midpoint,
    })?;
    let value = json!({
        "width": r.width,
        "height": r.height,
        "focal_px": r.focal_px,
        "hfov_deg": r.hfov_rad.to_degrees(),
        "hfov_rad": r.hfov_rad,
        "xi": r.xi,
        "pitch_deg": r.pitch_rad.map(f64::to_degrees),
        "pitch_rad": r.pitch_rad,
        "midpoint_units": r.midpoint_units,
    });
    emit(json, value, || {
        let mut s = format!(
            "focal_px {:.6}\nhfov_deg {:.6}\nxi {:.6}",
            r.focal_px,
            r.hfov_rad.to_degrees(),
            r.xi
        );
        if let (Some(p), Some(m)) = (r.pitch_rad, r.midpoint_units) {
            s.push_str(&format!("\npitch_deg {:.6}\nmidpoint_units {:.6}", p.to_degrees(), m));
        }
        s
    });
    Ok(())
}

fn dataset_cmd(c: DatasetCommand, json: bool) -> Result<()> {
    match c {
        DatasetCommand::Config => {
            println!("{}", SamplingConfig::default().to_json());
            Ok(())
        }
        DatasetCommand::Generate {
            panos,
            out,
            count,
            seed,
            config,
        } => {
            let config = match config {
                Some(path) => SamplingConfig::load(path)?,
                None => SamplingConfig::default(),
            };
            let report = dataset::generate_dataset(&panos, &out, &config, count, seed)?;
            emit(json, to_json(&report), || {
                format!(
                    "{} records ({} rendered, {} reused) -> {}",
                    report.records,
                    report.rendered,
                    report.reused,
                    report.manifest.display()
                )
            });
            Ok(())
        }
    }
}

fn undistort_cmd(a: UndistortArgs, json: bool) -> Result<()> {
    let src = Image::load_png(&a.input)?;
    let intr = a.lens.intrinsics(src.width() as f64, src.height() as f64)?;
    let mut target = default_target(&intr);
    if let Some(h) = a.target_hfov_deg {
        target.lens = TargetLens::HfovRad(h.to_radians());
    }
    if let Some(f) = a.target_focal_px {
        target.lens = TargetLens::FocalPx(f);
    }
    target.width = a.target_width.unwrap_or(target.width);
    target.height = a.target_height.unwrap_or(target.height);
    let out = undistort(&src, &intr, &target)?;
    out.save_png(&a.out, a.bit_depth.into())?;
    let focal = target.intrinsics()?.focal_px();
    emit(
        json,
        json!({"out": a.out, "width": target.width, "height": target.height, "target_focal_px": focal}),
        || format!("{}x{} (f = {focal:.3} px) -> {}", target.width, target.height, a.out.display()),
    );
    Ok(())
}

fn horizon_cmd(c: HorizonCommand, json: bool) -> Result<()> {
    match c {
        HorizonCommand::Draw {
            input,
            out,
            lens,
            pose,
            thickness,
            color,
        } => {
            let img = Image::load_png(&input)?;
            let intr = lens.intrinsics(img.width() as f64, img.height() as f64)?;
            let color = match (img.channels(), color.len()) {
                (1, n) if n > 1 => vec![color.iter().sum::<f32>() / n as f32],
                _ => color,
            };
            let drawn = draw_horizon(&img, pose.orientation(), &intr, &color, thickness)?;
            drawn.save_png(&out, BitDepth::Eight)?;
            emit(json, json!({"out": out}), || format!("-> {}", out.display()));
            Ok(())
        }
        HorizonCommand::Endpoints {
            width,
            height,
            lens,
            pose,
        } => {
            let intr = lens.intrinsics(width, height)?;
            let (l, r) = horizon_endpoints(pose.orientation(), &intr)?;
            emit(json, json!({"v_left": l, "v_right": r}), || format!("v_left {l:.9}\nv_right {r:.9}"));
            Ok(())
        }
        HorizonCommand::Index { manifest, out } => {
            let records = dataset::read_manifest(&manifest)?;
            let (index, skipped) = build_index(&records);
            index.save(&out)?;
            for s in &skipped {
                log::warn!("record {} skipped: {}", s.id, s.reason);
            }
            emit(
                json,
                json!({"out": out, "indexed": index.len(), "skipped": to_json(&skipped)}),
                || format!("{} indexed, {} skipped -> {}", index.len(), skipped.len(), out.display()),
            );
            Ok(())
        }
        HorizonCommand::Retrieve {
            index,
            manifest,
            v_left,
            v_right,
            width,
            height,
            xi,
            focal_px,
            hfov_deg,
            pose,
            k,
        } => {
            let index = match (index, manifest) {
                (Some(path), _) => RetrievalIndex::load(path)?,
                (None, Some(path)) => build_index(&dataset::read_manifest(path)?).0,
                (None, None) => return Err(Error::InvalidArgument("need --index or --manifest".into())),
            };
            let feature = match (v_left, v_right) {
                (Some(l), Some(r)) => (l, r),
                _ => {
                    let (Some(w), Some(h), Some(xi)) = (width, height, xi) else {
                        return Err(Error::InvalidArgument(
                            "give --v-left/--v-right or a query camera (--width, --height, --xi, lens, pose)".into(),
                        ));
                    };
                    let lens = LensArgs { xi, focal_px, hfov_deg };
                    horizon_endpoints(pose.orientation(), &lens.intrinsics(w, h)?)?
                }
            };
            let matches = index.query(feature, k)?;
            emit(
                json,
                json!({"feature": [feature.0, feature.1], "matches": to_json(&matches)}),
                || {
                    matches
                        .iter()
                        .map(|m| format!("{} {:.9}", m.id, m.distance))
                        .collect::<Vec<_>>()
                        .join("\n")
                },
            );
            Ok(())
        }
    }
}

/// Degrees on the command line, radians inside, for angular parameters.
fn to_internal(p: Parameter, v: f64) -> f64 {
    if p.is_angle() {
        v.to_radians()
    } else {
        v
    }
}

fn range_arg(p: Parameter, arg: Option<Vec<f64>>, default: (f64, f64)) -> (f64, f64) {
    match arg.as_deref() {
        Some([lo, hi]) => (to_internal(p, *lo), to_internal(p, *hi)),
        _ => default,
    }
}

#[derive(serde::Deserialize)]
struct EstimateRow {
    parameter: String,
    gt_value: f64,
    estimate: f64,
}

fn read_estimates(path: &Path) -> Result<Vec<Estimate>> {
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    reader
        .deserialize::<EstimateRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(Estimate {
                parameter: row.parameter.parse()?,
                gt_value: row.gt_value,
                estimate: row.estimate,
            })
        })
        .collect()
}

fn perceptual_cmd(c: PerceptualCommand, json: bool) -> Result<()> {
    match c {
        PerceptualCommand::Fit {
            csv,
            surface,
            parameter,
            min_count,
            value_range,
            error_range,
        } => {
            let records = perceptual::read_csv(&csv)?;
            let wanted: Vec<Parameter> = match parameter {
                Some(p) => vec![p.parse()?],
                None => Parameter::ALL
                    .into_iter()
                    .filter(|p| records.iter().any(|r| r.parameter == *p))
                    .collect(),
            };
            if wanted.is_empty() {
                return Err(Error::NoData);
            }
            let mut set = SurfaceSet::new();
            for p in wanted {
                let (dv, de) = p.default_ranges();
                let vr = range_arg(p, value_range.clone(), dv);
                let er = range_arg(p, error_range.clone(), de);
                set.insert(perceptual::fit_surface(&records, p, vr, er, min_count)?);
            }
            set.save(&surface)?;
            let cells: BTreeMap<&str, usize> = set.iter().map(|s| (s.parameter().name(), s.unmasked_cells())).collect();
            emit(json, json!({"surface": surface, "unmasked_cells": cells}), || {
                format!("{cells:?} -> {}", surface.display())
            });
            Ok(())
        }
        PerceptualCommand::Eval {
            surface,
            parameter,
            gt_value,
            error,
        } => {
            let p: Parameter = parameter.parse()?;
            let set = SurfaceSet::load(&surface)?;
            let s = set.get(p).ok_or_else(|| Error::MissingSurface(p.name().into()))?;
            let d = s.evaluate(to_internal(p, gt_value), to_internal(p, error))?;
            emit(json, to_json(&d), || {
                format!("{:.6}{}", d.value, if d.degraded { " (degraded)" } else { "" })
            });
            Ok(())
        }
        PerceptualCommand::Score { csv, surface } => {
            let set = SurfaceSet::load(&surface)?;
            let estimates = read_estimates(&csv)?;
            let scores = perceptual::score_method(&set, &estimates)?;
            emit(json, to_json(&scores), || {
                scores
                    .iter()
                    .map(|(p, s)| {
                        let m = &s.summary;
                        format!(
                            "{p}: median {:.4} q1 {:.4} q3 {:.4} mean {:.4} n {}",
                            m.median, m.q1, m.q3, m.mean, m.count
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            Ok(())
        }
    }
}

fn bins_cmd(c: BinsCommand, json: bool) -> Result<()> {
    match c {
        BinsCommand::Export { out } => {
            let set = BinSet::default();
            set.save(&out)?;
            emit(
                json,
                json!({"out": out, "roll": set.roll.len(), "midpoint": set.midpoint.len(), "hfov": set.hfov.len(), "xi": set.xi.len()}),
                || format!("roll {} / midpoint {} / hfov {} / xi {} bins -> {}", set.roll.len(), set.midpoint.len(), set.hfov.len(), set.xi.len(), out.display()),
            );
            Ok(())
        }
        BinsCommand::Encode { manifest, bins: path, out } => {
            let set = match path {
                Some(p) => BinSet::load(p)?,
                None => BinSet::default(),
            };
            let records = dataset::read_manifest(&manifest)?;
            let targets = bins::encode_manifest(&records, &set);
            bins::write_targets(&out, &targets)?;
            emit(json, json!({"out": out, "records": targets.len()}), || {
                format!("{} records -> {}", targets.len(), out.display())
            });
            Ok(())
        }
    }
}
