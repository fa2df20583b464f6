use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported dtype {dtype:?} for tensor {name:?}")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("shape mismatch for {name:?}: {detail}")]
    ShapeMismatch { name: String, detail: String },

    #[error("invalid tensor name {0:?}")]
    InvalidName(String),

    #[error("name sets differ: missing {missing:?}, extra {extra:?}")]
    NameSetMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("layer {0:?} has no tensors")]
    EmptyGroup(String),

    #[error("invalid layer pattern: {0}")]
    InvalidPattern(String),

    #[error("density must lie in (0, 1], got {0}")]
    InvalidDensity(f64),

    #[error("invalid spread {spread} for density {density}: need spread >= 0 and density - spread/2 > 0")]
    InvalidSpread { density: f64, spread: f64 },

    #[error("invalid weight {0}: weights must be finite and non-negative")]
    InvalidWeight(f64),

    #[error("weights sum to zero")]
    ZeroWeightSum,

    #[error("at least one input is required")]
    NoInputs,

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least 2 elements, got {0}")]
    TooFewElements(usize),

    #[error("no layer has a defined correlation")]
    NoDefinedCorrelations,

    #[error("ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),

    #[error("reference is empty")]
    EmptyReference,

    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),

    #[error("grid point {point}: {source}")]
    GridPoint {
        point: String,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scorer failed: {0}")]
    Scorer(String),
}

impl Error {
    /// Variant name, for typed error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::UnsupportedDtype { .. } => "UnsupportedDtype",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::InvalidName(_) => "InvalidName",
            Error::NameSetMismatch { .. } => "NameSetMismatch",
            Error::EmptyGroup(_) => "EmptyGroup",
            Error::InvalidPattern(_) => "InvalidPattern",
            Error::InvalidDensity(_) => "InvalidDensity",
            Error::InvalidSpread { .. } => "InvalidSpread",
            Error::InvalidWeight(_) => "InvalidWeight",
            Error::ZeroWeightSum => "ZeroWeightSum",
            Error::NoInputs => "NoInputs",
            Error::InvalidRecipe(_) => "InvalidRecipe",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::TooFewElements(_) => "TooFewElements",
            Error::NoDefinedCorrelations => "NoDefinedCorrelations",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::EmptyReference => "EmptyReference",
            Error::InvalidPlan(_) => "InvalidPlan",
            Error::GridPoint { source, .. } | Error::AtLine { source, .. } => source.kind(),
            Error::Scorer(_) => "Scorer",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            name: name.into(),
            detail: detail.into(),
        }
    }
}
