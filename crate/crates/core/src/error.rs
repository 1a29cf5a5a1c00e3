use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data integrity error: {0}")]
    Integrity(String),

    #[error("insufficient data: need at least {needed} complete days, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("window out of bounds: {0}")]
    Bounds(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("calibration failed for hour {hour}: {message}")]
    Calibration { hour: usize, message: String },

    #[error("error sample too small: need at least {needed} residuals, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("distribution fit failed: {0}")]
    Fit(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("day {day}, stage {stage}: {source}")]
    Stage {
        day: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(self, day: usize, stage: &'static str) -> Self {
        Error::Stage {
            day,
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input (configuration, arguments,
    /// unreadable data) rather than a failure while running.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Argument(_)
            | Error::Parse { .. }
            | Error::Integrity(_)
            | Error::InsufficientData { .. } => true,
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            Error::Stage { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
