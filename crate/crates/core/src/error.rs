use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown distortion function `{0}` (expected entropy_like, gaussian_score or gini)")]
    UnknownDistortion(String),

    #[error("invalid distortion function `{name}`: {reason}")]
    InvalidDistortion { name: String, reason: String },

    #[error("divergent derivative norm: {0}")]
    DivergentNorm(String),

    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    /// The Sharpe ratio is zero, so every closed form dividing by rho^2 is undefined.
    #[error("degenerate Sharpe ratio (rho = 0)")]
    DegenerateSharpe,

    /// `log` regularizer of a policy with zero scale: the value is negative infinity.
    #[error("degenerate policy: log regularizer is -inf for zero scale")]
    DegeneratePolicy,

    /// The evaluation point has zero density under the policy.
    #[error("u = {u} is outside the policy support")]
    OutsideSupport { u: f64 },

    #[error("density unavailable for distortion `{0}`")]
    DensityUnavailable(String),

    #[error("convexity violated: A({t}) = {a} <= 0")]
    ConvexityViolated { t: f64, a: f64 },

    #[error("non-finite parameter after episode {episode}: {detail}")]
    NonFiniteParameter { episode: usize, detail: String },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
