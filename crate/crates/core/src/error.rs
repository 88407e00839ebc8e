//! Error types shared across the crate.
//!
//! Estimator failures (non-positive-definite corrected Gram matrix, negative
//! corrected residual variance, Newton divergence) are first-class outcomes:
//! the simulation harness counts them per replicate instead of crashing.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("Sigma not positive definite")]
    SigmaNotPositiveDefinite,

    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// `sample_mixture` was handed a conditional spec (q > 0).
    #[error("use sample_conditional_mixture")]
    UseConditionalSampler,

    /// `sample_conditional_mixture` was handed an unconditional spec.
    #[error("conditional spec required")]
    ConditionalSpecRequired,

    /// Population covariance of the combined covariates is singular.
    #[error("degenerate covariates")]
    DegenerateCovariates,

    /// Design matrix (with intercept column) is rank deficient.
    #[error("singular design")]
    SingularDesign,

    /// Mixture MLE needs both outcome classes to be nonempty.
    #[error("degenerate class")]
    DegenerateClass,

    #[error("singular pooled covariance")]
    SingularPooledCovariance,

    /// Newton iteration on the logistic score failed to converge; raw binary
    /// data with complete separation ends up here.
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    /// The noise-corrected Gram matrix G = W̃ᵀW̃ − nσ²J is not positive
    /// definite; the replicate should be recorded as failed.
    #[error("noise-dominated design (G singular)")]
    NoiseDominatedDesign,

    /// The corrected residual variance denominator is not strictly positive.
    #[error("noise-dominated response")]
    NoiseDominatedResponse,

    #[error("zero residual variance")]
    ZeroResidualVariance,

    /// The estimated Jacobian of the estimating equations cannot be inverted.
    #[error("non-invertible Jacobian")]
    NonInvertibleJacobian,

    /// A variance needed for a confidence interval is negative or non-finite.
    #[error("invalid covariance")]
    InvalidCovariance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Whether this error marks a per-replicate estimation failure that a
    /// batch run records and moves past, rather than a caller bug.
    pub fn is_estimation_failure(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::NoiseDominatedDesign
                | Error::NoiseDominatedResponse
                | Error::ZeroResidualVariance
                | Error::SingularDesign
                | Error::NonInvertibleJacobian
                | Error::InvalidCovariance
                | Error::DegenerateClass
                | Error::SingularPooledCovariance
        )
    }
}
