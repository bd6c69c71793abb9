use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A simulated state left the finite range. `path` is `None` for
    /// single-trajectory routines.
    #[error("non-finite state at step {step}{}", path.map(|p| format!(" of path {p}")).unwrap_or_default())]
    NonFiniteState { path: Option<u64>, step: usize },

    #[error("resolvent matrix I - (h/2)∇²F(x) is singular")]
    SingularHessianResolvent,

    #[error("path record does not retain Brownian increments")]
    IncrementsNotRetained,

    #[error("ODE step size underflow at t = {t:e} (step {step})")]
    ToleranceNotMet { t: f64, step: usize },

    #[error("degenerate order fit: {0}")]
    DegenerateFit(String),

    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState { .. } | Error::SingularHessianResolvent | Error::ToleranceNotMet { .. }
        )
    }
}
