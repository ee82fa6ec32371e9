use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data is malformed, empty or non-finite.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("index {index} out of range for mode {mode} of size {size}")]
    Index {
        mode: usize,
        index: usize,
        size: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dense materialization of {entries} entries exceeds cap of {cap}")]
    SizeCap { entries: u128, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    /// The Jacobian lost rank: `sigma_min < rank_tol * sigma_max`.
    #[error("degenerate Jacobian (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    DegenerateJacobian { sigma_min: f64, sigma_max: f64 },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    /// ALS slice `(core, index)` has too few samples to be solved without regularization.
    #[error("underdetermined slice (core {core}, index {index}): {samples} samples for {unknowns} unknowns")]
    Underdetermined {
        core: usize,
        index: usize,
        samples: usize,
        unknowns: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Broad class of the failure, used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) | Error::Config(_) => ErrorKind::Config,
            Error::Input(_)
            | Error::Index { .. }
            | Error::Shape(_)
            | Error::SizeCap { .. }
            | Error::Format(_)
            | Error::Io(_) => ErrorKind::Data,
            Error::DegenerateJacobian { .. }
            | Error::Underdetermined { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Sample { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}
