//! Library-wide error type.

use thiserror::Error;

/// Errors produced by the dynamics, frame, and reduction machinery.
#[derive(Debug, Error)]
pub enum Error {
    /// An input vector or matrix had the wrong length for the chart.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A non-finite number appeared while evaluating a scalar or vector
    /// field. Evaluation aborts instead of propagating NaN into the solvers.
    #[error("non-finite value while evaluating {context}")]
    NonFinite { context: &'static str },

    /// A linear solve hit a pivot below the singularity threshold.
    #[error("singular linear system in {context} (pivot below {tol:e})")]
    SingularMatrix { context: &'static str, tol: f64 },

    /// The frame matrix failed its invertibility check at a chart point.
    #[error("frame degenerate at evaluated point (|det| = {det:e} <= {tol:e})")]
    FrameDegenerate { det: f64, tol: f64 },

    /// The constrained mass matrix is not invertible at the given state;
    /// the Lagrangian is not regular with respect to the constraint
    /// distribution there.
    #[error("regularity failure: constrained mass matrix singular")]
    RegularityFailure,

    /// A frame split does not satisfy the structural identities expected of
    /// an invariant adapted frame (e.g. a bracket with a vertical field has
    /// a transverse component).
    #[error("inconsistent frame split: {0}")]
    InconsistentSplit(String),

    /// Newton iteration for the momentum relation failed to converge.
    #[error("momentum solve did not converge within {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    /// A configuration value failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The requested system name is not in the registry.
    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    /// The dynamics could not be evaluated mid-trajectory.
    #[error("dynamics failure at t = {t}: {source}")]
    DynamicsFailure {
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
