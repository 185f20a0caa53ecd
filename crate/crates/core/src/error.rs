use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // container format
    #[error("bad magic: expected CMME, found {found:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported flag bits {0:#04x}")]
    UnsupportedFlags(u8),
    #[error("truncated header: {len} bytes")]
    TruncatedHeader { len: usize },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("trailing bytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    // matrix invariants
    #[error("invalid shape {rows}x{dim}: {reason}")]
    InvalidShape {
        rows: usize,
        dim: usize,
        reason: &'static str,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} is flagged normalized but has L2 norm {norm}")]
    NotNormalized { row: usize, norm: f64 },
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    // catalog / manifest
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no variant {variant} for template {template}, class {class}")]
    MissingVariant {
        template: usize,
        class: usize,
        variant: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // labels and indices
    #[error("label {label} at position {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    // computation
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value at template {index}")]
    NonFiniteScore { index: usize },
    #[error("selection mask keeps no template")]
    EmptySelection,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Stable machine-readable class name, used by the CLI for error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) | Error::File { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::UnsupportedFlags(_) => "unsupported_flags",
            Error::TruncatedHeader { .. } => "truncated_header",
            Error::TruncatedPayload { .. } => "truncated_payload",
            Error::TrailingBytes { .. } => "trailing_bytes",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::InvalidShape { .. } => "invalid_shape",
            Error::NonFinite { .. } => "non_finite",
            Error::NotNormalized { .. } => "not_normalized",
            Error::ZeroNorm { .. } => "zero_norm",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidManifest(_) => "invalid_manifest",
            Error::Json(_) => "json",
            Error::MissingVariant { .. } => "missing_variant",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::Parse { .. } => "parse",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::TooFewClasses(_) => "too_few_classes",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::Empty(_) => "empty_input",
            Error::NonFiniteScore { .. } => "non_finite_score",
            Error::EmptySelection => "empty_selection",
            Error::InvalidConfig(_) => "invalid_config",
        }
    }
}
