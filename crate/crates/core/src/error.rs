use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A constructor or operation received a parameter outside its admissible set.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// Argument outside the analyticity strip, divergent moment, or similar.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("price {price:.17e} violates arbitrage band [{lower:.17e}, {upper:.17e}] beyond tolerance")]
    ArbitrageBand { price: f64, lower: f64, upper: f64 },

    #[error("singular hedge system: |det| = {det:.3e} below threshold {threshold:.3e}")]
    SingularHedge { det: f64, threshold: f64 },

    #[error("numerical accuracy error: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_finite(field: &'static str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite, got {x}")))
    }
}
