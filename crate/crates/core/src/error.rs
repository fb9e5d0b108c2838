use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("matrix is singular to tolerance (smallest/largest singular value = {ratio:e})")]
    Singular { ratio: f64 },

    #[error("W_V is singular to tolerance (ratio {ratio:e}); the compact construction needs an invertible value matrix, use the full construction instead")]
    CompactNeedsInvertibleValues { ratio: f64 },

    #[error("{0}")]
    Invalid(String),

    #[error("state overflow at timestep {step}: |h| = {magnitude:e}")]
    Overflow { step: usize, magnitude: f64 },

    #[error("non-finite state at timestep {step}")]
    NonFinite { step: usize },

    #[error("primitive `{0}` has no registered gradient")]
    Unregistered(String),

    #[error("{arch} is not a polynomial map: {reason}")]
    NotPolynomial { arch: String, reason: String },

    #[error("polynomial has coefficient {coef:e} at degree {degree} above max degree {max_degree}")]
    DegreeOverflow {
        degree: usize,
        max_degree: usize,
        coef: f64,
    },

    #[error("merge refused: {0}")]
    MergeRefused(String),

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
