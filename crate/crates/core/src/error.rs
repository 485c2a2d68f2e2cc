use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input length {got} does not match expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid spiking pattern: {0}")]
    InvalidPattern(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("spectrum is not preserved by pattern {pattern}")]
    PatternMismatch { pattern: String },

    #[error("invalid perturbation box: {0}")]
    InvalidBox(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("gradient probe rejected: {0}")]
    RejectedProbe(String),

    #[error("missing certificate: {0}")]
    NotCertified(String),

    #[error("support grid needs {points} points, budget is {budget}")]
    ResolutionExceeded { points: u128, budget: u128 },

    #[error("candidates disagree on (a, b, K): {0}")]
    MixedCandidates(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
