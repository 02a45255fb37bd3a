use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty stack")]
    EmptyStack,
    #[error("empty object mask")]
    EmptyObjectMask,
    #[error("no object found")]
    NoObjectFound,
    #[error("degenerate object interval [{lo}, {hi}]")]
    DegenerateObject { lo: f64, hi: f64 },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid threshold policy: {0}")]
    InvalidThreshold(String),
    #[error("invalid stack: {0}")]
    InvalidStack(String),

    #[error("oracle requires integer grid: {0}")]
    OracleRequiresIntegerGrid(String),
    #[error("fold width must be at least 1, got {0}")]
    InvalidFoldWidth(i64),

    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("batch norm over zero elements per channel")]
    EmptyBatchNorm,
    #[error("backward called before a forward pass was recorded")]
    BackwardBeforeForward,
    #[error("{0} requires a non-empty input")]
    EmptyInput(&'static str),

    #[error("bad magic")]
    BadMagic,
    #[error("unsupported weights version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file")]
    Truncated,
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("stack has {slices} slices, model accepts at most {max}")]
    StackTooLarge { slices: usize, max: usize },

    #[error("infeasible phantom spec: {0}")]
    InfeasiblePhantom(String),
    #[error("missing slice {}", .0.display())]
    MissingSlice(PathBuf),
    #[error("label out of bounds for stack {0}")]
    LabelOutOfBounds(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("split overlap: stack {0} appears more than once")]
    SplitOverlap(String),
    #[error("netpbm: {0}")]
    Pnm(String),

    #[error("empty split {0}")]
    EmptySplit(String),
    #[error("sample too small: need at least {need}, got {got}")]
    SampleTooSmall { need: usize, got: usize },
    #[error("invalid proportion: {0}")]
    InvalidProportion(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyStack => "empty_stack",
            Error::EmptyObjectMask => "empty_object_mask",
            Error::NoObjectFound => "no_object_found",
            Error::DegenerateObject { .. } => "degenerate_object",
            Error::InvalidBox(_) => "invalid_box",
            Error::InvalidInterval { .. } => "invalid_interval",
            Error::InvalidThreshold(_) => "invalid_threshold",
            Error::InvalidStack(_) => "invalid_stack",
            Error::OracleRequiresIntegerGrid(_) => "oracle_requires_integer_grid",
            Error::InvalidFoldWidth(_) => "invalid_fold_width",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::EmptyBatchNorm => "empty_batch_norm",
            Error::BackwardBeforeForward => "backward_before_forward",
            Error::EmptyInput(_) => "empty_input",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated => "truncated",
            Error::MissingTensor(_) => "missing_tensor",
            Error::ArchitectureMismatch { .. } => "architecture_mismatch",
            Error::StackTooLarge { .. } => "stack_too_large",
            Error::InfeasiblePhantom(_) => "infeasible_phantom",
            Error::MissingSlice(_) => "missing_slice",
            Error::LabelOutOfBounds(_) => "label_out_of_bounds",
            Error::MalformedManifest(_) => "malformed_manifest",
            Error::SplitOverlap(_) => "split_overlap",
            Error::Pnm(_) => "pnm",
            Error::EmptySplit(_) => "empty_split",
            Error::SampleTooSmall { .. } => "sample_too_small",
            Error::InvalidProportion(_) => "invalid_proportion",
            Error::NonFinite(_) => "non_finite",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// True for failures of the numeric machinery rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::BackwardBeforeForward | Error::EmptyBatchNorm
        )
    }
}
