use thiserror::Error;

/// Errors produced by the game, solver and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("no balanced strategy exists for this model (minimal dispersion {s_min:.6} > 1)")]
    Infeasible { s_min: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("final condition refused: {0}")]
    FinalCondition(String),

    #[error("state outside the solved domain: {0}")]
    OutOfDomain(String),

    #[error("CFL condition violated: ratio {ratio:.4} > 0.5, use nt >= {suggested_nt}")]
    Cfl { ratio: f64, suggested_nt: usize },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by bad caller input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::Capacity(_)
                | Error::Infeasible { .. }
                | Error::Degenerate(_)
                | Error::UnsupportedRegime(_)
                | Error::FinalCondition(_)
                | Error::OutOfDomain(_)
                | Error::Cfl { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
