use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid divergence: {0}")]
    InvalidDivergence(String),

    #[error("degenerate marginal: {0}")]
    DegenerateMarginal(String),

    #[error("non-finite solver state at outer iteration {iteration}")]
    NumericBlowup { iteration: usize },

    #[error("inner solver failed for sample {sample} at outer iteration {iteration}: {source}")]
    InnerSolver {
        iteration: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
