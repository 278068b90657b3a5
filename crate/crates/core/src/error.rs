use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box {0:?}: width and height must be positive")]
    DegenerateBox([f64; 4]),

    #[error("non-finite box coordinate in {0:?}")]
    NonFinite([f64; 4]),

    #[error("invalid power {0}: must be greater than 1")]
    InvalidPower(f64),

    #[error("loss base value {value} outside its domain (minimum {min})")]
    DomainError { value: f64, min: f64 },

    #[error("update at iteration {iter} produced an invalid box {coords:?}")]
    DegenerateStep { iter: usize, coords: [f64; 4] },

    #[error("sample is empty")]
    EmptySample,

    #[error("input is empty")]
    EmptyInput,

    #[error("no witness found in {samples} samples")]
    NotFound { samples: usize },

    #[error("{}", match .line { Some(l) => format!("parse error at line {l}: {msg}"), None => format!("parse error: {msg}") })]
    Parse { line: Option<usize>, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            Error::Parse { msg, .. } => Error::Parse {
                line: Some(line),
                msg,
            },
            other => Error::Parse {
                line: Some(line),
                msg: other.to_string(),
            },
        }
    }

    /// True for errors caused by malformed user input rather than by a
    /// failed search or assertion.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NotFound { .. } | Error::DegenerateStep { .. })
    }
}
