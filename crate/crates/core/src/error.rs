use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // imaging
    #[error("degenerate image: lower and upper intensity limits are both {0}")]
    DegenerateImage(f64),
    #[error("image {height}x{width} is too small for a {patch_size}px patch")]
    ImageTooSmall {
        height: usize,
        width: usize,
        patch_size: usize,
    },

    // descriptors and binary formats
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    // vocabularies
    #[error("too few points: {points} points for {clusters} clusters")]
    TooFewPoints { points: usize, clusters: usize },

    // classifiers
    #[error("training data contains a single class")]
    SingleClass,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },

    // evaluation
    #[error("species {species} is missing from preparation {preparation}")]
    MissingSpecies { species: String, preparation: u8 },
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("no foreground patches")]
    NoForegroundPatches,
    #[error("mixed encoding kinds or vocabulary sizes")]
    MixedEncodingKinds,
    #[error("scan {0} appears on both sides of a split")]
    SplitLeak(String),
    #[error("not enough scans of species {species} for {folds} folds (have {scans})")]
    TooFewScans {
        species: String,
        scans: usize,
        folds: usize,
    },

    // cli
    #[error("manifest is empty")]
    ManifestEmpty,
    #[error("missing descriptors for {} patches: {}", .0.len(), .0.join(", "))]
    MissingDescriptors(Vec<String>),
    #[error("model file missing: {}", .0.display())]
    ModelMissing(PathBuf),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 for validation errors, 2 for runtime and data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::InvalidArgument(_) | Error::Config(_) | Error::ManifestEmpty | Error::EmptyGrid => 1,
            _ => 2,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(context()))
    }
}
