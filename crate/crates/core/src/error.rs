use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point does not project: xi*|p| + z = {denominator:e} is not in front of the projection center")]
    DegenerateProjection { denominator: f64 },
    #[error("field of view {0} rad is outside (0, pi)")]
    InvalidFov(f64),
    #[error("distortion xi = {0} is outside the model range [0, 1]")]
    OutOfModelRange(f64),
    #[error("horizon lies at infinity (xi + cos(pitch) = {0:e})")]
    HorizonAtInfinity(f64),
    #[error("no pitch in (-pi/2, pi/2) produces horizon midpoint {0}")]
    NoValidPitch(f64),
    #[error("no horizon direction projects into the image plane")]
    EmptyHorizon,
    #[error("horizon does not cross the {0} image boundary")]
    NoIntersection(&'static str),

    #[error("panorama is {width}x{height}, expected a 2:1 equirectangular image")]
    BadPanoramaAspect { width: usize, height: usize },
    #[error("camera sampling exhausted after {0} rejections")]
    SamplingExhausted(usize),
    #[error("invalid undistortion target: {0}")]
    InvalidTarget(String),
    #[error("image buffer mismatch: {0}")]
    InvalidImage(String),

    #[error("no perceptual data: every surface cell is masked")]
    NoData,
    #[error("no fitted surface for parameter {0}")]
    MissingSurface(String),
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than by the
    /// environment (I/O, decoding) or by data that failed to converge.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidIntrinsics(_)
                | Error::InvalidFov(_)
                | Error::OutOfModelRange(_)
                | Error::InvalidTarget(_)
                | Error::InvalidArgument(_)
                | Error::BadPanoramaAspect { .. }
                | Error::NoValidPitch(_)
                | Error::HorizonAtInfinity(_)
        )
    }
}
