use std::fmt;

/// Library-wide error type.
///
/// Kernel operations report `ShapeMismatch` with enough context to find the
/// offending call site; structural problems (bad group counts, widths that
/// do not divide) surface as `InvalidConfig` at construction time rather
/// than mid-forward.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand extents do not satisfy the operation's shape contract.
    ShapeMismatch { op: &'static str, detail: String },
    /// A configuration value is structurally invalid (non-divisible groups,
    /// even attention kernel, zero width, ...).
    InvalidConfig(String),
    /// backward() was called on a tensor that is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// backward() was called on a tensor with no tape behind it.
    NoGradPath,
    /// A class label lies outside [0, classes).
    LabelOutOfRange { label: usize, classes: usize },
    /// A reduction over an empty batch or window was requested.
    EmptyReduction(&'static str),
    /// Training produced a non-finite loss and aborted.
    NonFiniteLoss { step: u64, value: f64 },
    /// A model name is not in the registry.
    UnknownModel(String),
    /// A model spec document failed to parse.
    SpecParse { line: usize, detail: String },
    /// A checkpoint file is malformed or inconsistent with the model.
    Checkpoint(String),
    /// An on-disk dataset is malformed (bad image header, mixed extents,
    /// empty class directory, ...).
    Dataset(String),
    /// Wrapped I/O failure with the path that caused it.
    Io { path: String, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            Error::InvalidConfig(detail) => write!(f, "invalid configuration: {detail}"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward() requires a scalar loss, got shape {shape:?}")
            }
            Error::NoGradPath => {
                write!(f, "backward() called on a tensor with no gradient tape")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::EmptyReduction(op) => write!(f, "{op} over an empty extent"),
            Error::NonFiniteLoss { step, value } => {
                write!(f, "non-finite loss {value} at step {step}; aborting training")
            }
            Error::UnknownModel(name) => write!(f, "unknown model '{name}'"),
            Error::SpecParse { line, detail } => {
                write!(f, "spec parse error at line {line}: {detail}")
            }
            Error::Checkpoint(detail) => write!(f, "checkpoint error: {detail}"),
            Error::Dataset(detail) => write!(f, "dataset error: {detail}"),
            Error::Io { path, detail } => write!(f, "i/o error on {path}: {detail}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), detail: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
