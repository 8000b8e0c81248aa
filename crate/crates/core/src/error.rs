use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GomError>;

#[derive(Debug, Error)]
pub enum GomError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("unknown channel {0:?}")]
    UnknownChannel(String),

    #[error("missing channel {0:?}")]
    MissingChannel(String),

    #[error("non-numeric value {value:?} at row {row}, channel {channel}")]
    NonNumeric { row: usize, channel: String, value: String },

    #[error("non-finite value at row {row}, channel {channel}")]
    NonFinite { row: usize, channel: String },

    #[error("sequence too short: {len} frames, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("channel sets differ")]
    ChannelMismatch,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("unstable synthetic dynamics for class {class:?}: spectral radius {radius}")]
    Unstable { class: String, radius: f64 },

    #[error("invalid synthetic spec: {0}")]
    SynthSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular innovation variance at step {0}")]
    SingularInnovation(usize),

    #[error("optimizer found no finite log-likelihood after {0} restarts")]
    OptimizerFailed(usize),

    #[error("generation diverged at frame {frame}, channel {channel}: {value}")]
    Diverged { frame: usize, channel: String, value: f64 },

    #[error("no significant channels to select from")]
    NothingSelected,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported exchange format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("exchange file does not match the equation system: {0}")]
    Exchange(String),
}

impl GomError {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            GomError::Io { .. } => "io",
            GomError::Json(_) => "json",
            GomError::Csv(_) => "csv",
            GomError::Topology(_) => "topology",
            GomError::UnknownChannel(_) => "unknown_channel",
            GomError::MissingChannel(_) => "missing_channel",
            GomError::NonNumeric { .. } => "non_numeric",
            GomError::NonFinite { .. } => "non_finite",
            GomError::TooShort { .. } => "too_short",
            GomError::ChannelMismatch => "channel_mismatch",
            GomError::Shape(_) => "shape",
            GomError::UnknownClass(_) => "unknown_class",
            GomError::Unstable { .. } => "unstable",
            GomError::SynthSpec(_) => "synth_spec",
            GomError::InvalidParameter(_) => "invalid_parameter",
            GomError::SingularInnovation(_) => "singular_innovation",
            GomError::OptimizerFailed(_) => "optimizer_failed",
            GomError::Diverged { .. } => "diverged",
            GomError::NothingSelected => "nothing_selected",
            GomError::Empty(_) => "empty",
            GomError::Version { .. } => "version",
            GomError::Exchange(_) => "exchange",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GomError::Io {
            path: path.into(),
            source,
        }
    }
}
