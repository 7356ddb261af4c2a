use thiserror::Error;

/// Errors produced across the rate model, the game dynamics and the analysis tools.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("quadrature did not reach tolerance (achieved relative error {achieved:.3e} after {subdivisions} subdivisions)")]
    Numerical { achieved: f64, subdivisions: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("utility is not concave on [{lo:.6}, {hi:.6}]: sampled {samples:?}")]
    NonConcave {
        lo: f64,
        hi: f64,
        samples: Vec<(f64, f64)>,
    },

    #[error("degenerate curvature: |d2U/dbeta2| = {0:.3e}")]
    DegenerateCurvature(f64),

    #[error("condition violated: {0}")]
    ConditionViolated(String),

    #[error("matrix structure violated: {0}")]
    Structure(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("bargaining infeasible: {0}")]
    BargainingInfeasible(String),

    #[error("degenerate scenario: {0}")]
    Degenerate(String),

    #[error("invalid configuration `{field}`: {message} (expected {expected})")]
    Config {
        field: String,
        expected: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, expected: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            expected: expected.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
