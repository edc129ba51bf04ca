use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unsupported distribution kind `{0}`")]
    UnsupportedKind(String),

    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("stretch argument must be non-negative, got {0}")]
    NegativeArgument(f64),

    #[error("window needs {need} columns but the environment has {have}")]
    WindowExceedsEnvironment { need: usize, have: usize },

    #[error("fewer than two renewal points in [{a}, {b}]")]
    InsufficientColumns { a: i64, b: i64 },

    #[error("schedule constraints violated: {}", .0.join("; "))]
    ConstraintViolation(Vec<String>),

    #[error("scale {k} is too deep (at most {max})")]
    ScaleTooDeep { k: usize, max: usize },

    #[error("block window of length {have} is too small, need at least {need}")]
    WindowTooSmall { need: u64, have: u64 },

    #[error("integer overflow while computing {0}")]
    Overflow(String),

    #[error("time {t} lies outside the window [{lo}, {hi}]")]
    TimeOutsideWindow { t: f64, lo: f64, hi: f64 },

    #[error("zero torus distance between U_{0} and U_{next}", next = .0 + 1)]
    DegenerateTorusDistance(usize),

    #[error("empty input sequence")]
    EmptySequence,

    #[error("contour length {0} is too large to enumerate (at most 12)")]
    ContourTooLong(usize),

    #[error("number of trials must be positive")]
    ZeroTrials,

    #[error("successes ({successes}) exceed trials ({trials})")]
    TooManySuccesses { successes: u64, trials: u64 },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("malformed configuration dump: {0}")]
    Dump(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error stems from bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::UnsupportedKind(_)
                | Error::ConstraintViolation(_)
                | Error::Config { .. }
                | Error::NegativeArgument(_)
        )
    }
}
