use std::path::PathBuf;

/// Errors produced by the training and attribution pipeline.
///
/// `category()` gives a stable, machine-parseable name for each variant; the
/// command-line front end prints it as the first token of its error line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {segment}")]
    Numeric { segment: String },
    #[error("{what} = {value} outside [{min}, {max}]")]
    Range {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("training diverged at step {step} (loss_ema = {loss_ema})")]
    Divergence { step: u64, loss_ema: f64 },
    #[error("LiSSA recursion diverged at depth {depth}; increase scale or damping")]
    LissaDivergence { depth: usize },
    #[error("degenerate gradient (norm {norm:e} below floor) at timestep {timestep}, draw {draw}")]
    DegenerateGradient { timestep: usize, draw: usize, norm: f64 },
    #[error("sample {0} has no training records")]
    MissingRecords(usize),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Numeric { .. } => "numeric",
            Error::Range { .. } => "range",
            Error::Argument(_) => "argument",
            Error::Lookup(_) => "lookup",
            Error::Divergence { .. } => "divergence",
            Error::LissaDivergence { .. } => "divergence",
            Error::DegenerateGradient { .. } => "degenerate-gradient",
            Error::MissingRecords(_) => "missing-records",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::EmptySelection(_) => "empty-selection",
            Error::Integrity(_) => "integrity",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
