//! Privacy-preserving logistic regression on matrix-masked data.
//!
//! This crate masks tabular datasets with the TM²+Noise scheme — left
//! multiplication by a random row-sum-preserving orthogonal matrix plus
//! additive Gaussian noise of known variance — and performs valid inference
//! for the logistic slope vector on the masked data. Because the masking
//! preserves the first and second sample moments of the raw data, estimators
//! built from those moments (linear-regression style) survive masking, while
//! the usual logistic MLE does not. The corrected least-squares estimator
//! here additionally debiases the moment statistics for the added noise and
//! pairs the point estimate with a sandwich covariance.
//!
//! Modules:
//! - [`model`]: generative mixture specifications, implied logistic
//!   coefficients, and population linear-regression parameters.
//! - [`sampling`]: seeded data generation, random row-sum-preserving
//!   orthogonal matrices, and the TM²+Noise masking itself.
//! - [`estimators`]: naive and corrected point estimators, the sandwich
//!   covariance, and confidence intervals.
//! - [`simulation`]: a parallel Monte Carlo harness aggregating bias, MSE,
//!   coverage, and significance proportions.
//! - [`cli`]: file formats and subcommand implementations for the `privmask`
//!   binary.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod sampling;
pub mod simulation;

pub use error::{Error, Result};
pub use estimators::{
    confidence_intervals, corrected_ls, mixture_mle_beta1, naive_cmle, naive_ls, ols_fit,
    solve_logistic_score, CoefficientEstimate, Method,
};
pub use model::{
    class_probability, implied_logistic_coefficients, population_linear_params,
    LinearPopulationParams, LogisticCoefficients, MaskedDataset, MixtureSpec, RawDataset,
};
pub use sampling::{
    apply_tm2_noise, random_row_sum_preserving_orthogonal, sample_conditional_mixture,
    sample_mixture, OrthogonalMask, SeedSpec,
};
pub use simulation::{
    run_scenario, significance_study, table_presets, PresetName, ScenarioConfig, SimulationReport,
};
