use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FreError>;

#[derive(Debug, Error)]
pub enum FreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    // FMX feature files
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported dtype code {0} (only 1 = float32 is supported)")]
    UnsupportedDtype(u8),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("empty matrix: {rows} rows x {cols} columns")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label block length mismatch: expected {expected} bytes, found {found}")]
    LabelLengthMismatch { expected: u64, found: u64 },
    #[error("invalid label {label} at row {row}")]
    InvalidLabel { row: usize, label: i64 },
    #[error("{0} trailing bytes after payload")]
    TrailingData(u64),

    // score csv
    #[error("malformed score file: {0}")]
    BadScoreFile(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fraction {0} outside (0, 1]")]
    FractionOutOfRange(f64),
    #[error("class {0} would be emptied by subsampling")]
    ClassEmptied(u32),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training data has zero variance")]
    ZeroVariance,
    #[error("all kernel eigenvalues fall below the numerical floor")]
    DegenerateKernel,
    #[error("training set of {0} rows exceeds the dense kernel limit of {1}; subsample first")]
    TooManyRows(usize, usize),
    #[error("pairwise distances are all zero; cannot pick an RBF width")]
    DegenerateBandwidth,
    #[error("pre-image iteration collapsed (kernel weights vanished) even after restart")]
    PreimageCollapse,
    #[error("numerical inconsistency: negative squared residual {0}")]
    NegativeResidual(f64),

    #[error("per-class mode requires class labels")]
    MissingLabels,
    #[error("class {class} has {count} samples; at least {needed} are required")]
    ClassTooSmall {
        class: u32,
        count: usize,
        needed: usize,
    },
    #[error("covariance is singular even after ridge regularization")]
    SingularCovariance,

    // FREB model files
    #[error("unsupported model file version {found} (this build reads version {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("corrupted model file: {0}")]
    CorruptedModel(String),
}

impl FreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        FreError::Io {
            path: path.into(),
            source,
        }
    }
}
