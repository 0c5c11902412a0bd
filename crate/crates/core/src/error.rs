use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("position ({x}, {y}) lies outside the active region")]
    OutOfDomain { x: f64, y: f64 },

    #[error("observation of path `{path}` at time {time} lies outside the grid")]
    ObservationOutOfDomain { path: String, time: f64 },

    #[error("finite-difference offset from ({x}, {y}) leaves the active region")]
    Boundary { x: f64, y: f64 },

    #[error("simulated position left the surface domain at step {step}")]
    DomainExit { step: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("spacing {h} is not aligned with the source time grid")]
    Alignment { h: f64 },

    #[error("sampling design error: {0}")]
    Design(String),

    #[error("path too short: {len} observations, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("non-increasing time step at observation {index}")]
    DegenerateStep { index: usize },

    #[error("singular least-squares fit: {0}")]
    SingularFit(String),

    #[error("rank-deficient penalized system: {0}")]
    Rank(String),

    #[error("grid component error: {0}")]
    Component(String),

    #[error("Geweke z undefined: {0}")]
    UndefinedZ(String),

    #[error("true positions are unavailable for scoring")]
    UnavailableTruth,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical procedure as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularFit(_)
                | Error::Rank(_)
                | Error::Component(_)
                | Error::UndefinedZ(_)
                | Error::DomainExit { .. }
        )
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse {
                line,
                msg: format!("{kind:?}"),
            },
        }
    }
}
