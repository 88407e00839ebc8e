//! Generative model types and parameter algebra.
//!
//! The generative model is a (conditional) Gaussian mixture: class labels
//! y* ∈ {0,1} with marginal weight p₁ (or logistic weights in confounders Z*),
//! and class-conditional covariates X* | y*=j ~ N(μⱼ (+ Z*C), Σ). Such a
//! mixture implies a logistic regression of y* on (X*, Z*) whose slope is
//! β₁ = Σ⁻¹(μ₁ − μ₀)ᵀ, and it also links β₁ to the population linear
//! regression of y* on the covariates: β₁ = b̄₁ / Var(ε). Both directions of
//! that link are computed here; the second doubles as a test oracle.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Class-weight half of a mixture specification: either a constant marginal
/// probability or a logistic model in the confounders.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassWeights {
    Marginal { p1: f64 },
    Logistic { gamma0: f64, gamma1: Array1<f64> },
}

/// Generative parameters of the (conditional) Gaussian mixture model.
///
/// Construct through [`MixtureSpec::unconditional`] or
/// [`MixtureSpec::conditional`]; the constructors enforce that Σ is symmetric
/// positive definite, that exactly one weight parameterization is present,
/// and that the confounder loading matrix C exists iff q > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    mu0: Array1<f64>,
    mu1: Array1<f64>,
    sigma: Array2<f64>,
    weights: ClassWeights,
    /// q×p loading of confounders onto the covariate means.
    confounder_loadings: Option<Array2<f64>>,
}

impl MixtureSpec {
    pub fn unconditional(
        mu0: Array1<f64>,
        mu1: Array1<f64>,
        sigma: Array2<f64>,
        p1: f64,
    ) -> Result<Self> {
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(Error::InvalidSpec(format!("p1 must lie in (0,1), got {p1}")));
        }
        let spec = MixtureSpec {
            mu0,
            mu1,
            sigma,
            weights: ClassWeights::Marginal { p1 },
            confounder_loadings: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn conditional(
        mu0: Array1<f64>,
        mu1: Array1<f64>,
        sigma: Array2<f64>,
        gamma0: f64,
        gamma1: Array1<f64>,
        confounder_loadings: Array2<f64>,
    ) -> Result<Self> {
        if gamma1.is_empty() {
            return Err(Error::InvalidSpec(
                "conditional spec needs at least one confounder".into(),
            ));
        }
        let spec = MixtureSpec {
            mu0,
            mu1,
            sigma,
            weights: ClassWeights::Logistic { gamma0, gamma1 },
            confounder_loadings: Some(confounder_loadings),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.mu1.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "mu0 has length {p}, mu1 has length {}",
                self.mu1.len()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidSpec("p must be at least 1".into()));
        }
        if self.sigma.dim() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "Sigma is {:?}, expected ({p}, {p})",
                self.sigma.dim()
            )));
        }
        let asym = (&self.sigma - &self.sigma.t()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if asym > 1e-10 * (1.0 + linalg::max_abs(self.sigma.view())) {
            return Err(Error::InvalidSpec("Sigma not symmetric".into()));
        }
        if linalg::cholesky(self.sigma.view()).is_none() {
            return Err(Error::SigmaNotPositiveDefinite);
        }
        if let Some(c) = &self.confounder_loadings {
            let q = self.q();
            if c.dim() != (q, p) {
                return Err(Error::DimensionMismatch(format!(
                    "C is {:?}, expected ({q}, {p})",
                    c.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.mu0.len()
    }

    pub fn q(&self) -> usize {
        match &self.weights {
            ClassWeights::Marginal { .. } => 0,
            ClassWeights::Logistic { gamma1, .. } => gamma1.len(),
        }
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self.weights, ClassWeights::Logistic { .. })
    }

    pub fn mu0(&self) -> ArrayView1<'_, f64> {
        self.mu0.view()
    }

    pub fn mu1(&self) -> ArrayView1<'_, f64> {
        self.mu1.view()
    }

    pub fn sigma(&self) -> ArrayView2<'_, f64> {
        self.sigma.view()
    }

    pub fn weights(&self) -> &ClassWeights {
        &self.weights
    }

    /// Marginal class-1 probability; `None` for conditional specs.
    pub fn p1(&self) -> Option<f64> {
        match self.weights {
            ClassWeights::Marginal { p1 } => Some(p1),
            ClassWeights::Logistic { .. } => None,
        }
    }

    pub fn confounder_loadings(&self) -> Option<ArrayView2<'_, f64>> {
        self.confounder_loadings.as_ref().map(|c| c.view())
    }

    /// Class-1 probability given a confounder row; constant when q = 0.
    pub fn class1_weight(&self, z: ArrayView1<'_, f64>) -> f64 {
        match &self.weights {
            ClassWeights::Marginal { p1 } => *p1,
            ClassWeights::Logistic { gamma0, gamma1 } => sigmoid(gamma0 + z.dot(gamma1)),
        }
    }
}

/// AR(1) covariance matrix with unit variances: Σᵢⱼ = ρ^|i−j|.
pub fn ar1_covariance(p: usize, rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(i, j)| rho.powi((i as i32 - j as i32).abs()))
}

/// Coefficients of the logistic model implied by a mixture specification.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticCoefficients {
    pub beta0: f64,
    pub beta1: Array1<f64>,
    /// Confounder coefficients; empty when q = 0.
    pub beta2: Array1<f64>,
}

/// Raw (pre-masking) dataset: binary outcomes and covariate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    y_star: Array1<f64>,
    x_star: Array2<f64>,
    z_star: Option<Array2<f64>>,
}

impl RawDataset {
    pub fn new(
        y_star: Array1<f64>,
        x_star: Array2<f64>,
        z_star: Option<Array2<f64>>,
    ) -> Result<Self> {
        let n = y_star.len();
        if x_star.nrows() != n {
            return Err(Error::InvalidDataset(format!(
                "y has {n} rows but X has {}",
                x_star.nrows()
            )));
        }
        if let Some(z) = &z_star {
            if z.nrows() != n {
                return Err(Error::InvalidDataset(format!(
                    "y has {n} rows but Z has {}",
                    z.nrows()
                )));
            }
            if z.ncols() == 0 {
                return Err(Error::InvalidDataset("Z present but has no columns".into()));
            }
        }
        if x_star.ncols() == 0 {
            return Err(Error::InvalidDataset("X has no columns".into()));
        }
        if y_star.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidDataset("y* entries must be 0 or 1".into()));
        }
        Ok(RawDataset { y_star, x_star, z_star })
    }

    pub fn n(&self) -> usize {
        self.y_star.len()
    }

    pub fn p(&self) -> usize {
        self.x_star.ncols()
    }

    pub fn q(&self) -> usize {
        self.z_star.as_ref().map_or(0, |z| z.ncols())
    }

    pub fn y_star(&self) -> ArrayView1<'_, f64> {
        self.y_star.view()
    }

    pub fn x_star(&self) -> ArrayView2<'_, f64> {
        self.x_star.view()
    }

    pub fn z_star(&self) -> Option<ArrayView2<'_, f64>> {
        self.z_star.as_ref().map(|z| z.view())
    }

    /// Combined covariate matrix W* = (X*, Z*), n×(p+q).
    pub fn combined_covariates(&self) -> Array2<f64> {
        match &self.z_star {
            None => self.x_star.clone(),
            Some(z) => ndarray::concatenate![Axis(1), self.x_star.view(), z.view()],
        }
    }
}

/// Masked dataset as released by the TM²+Noise scheme: real-valued outcome
/// vector, combined covariate matrix, and the (known) noise level. The mask
/// matrix itself is consumed at masking time and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDataset {
    y: Array1<f64>,
    w: Array2<f64>,
    sigma: f64,
    p: usize,
    q: usize,
}

impl MaskedDataset {
    pub fn new(y: Array1<f64>, w: Array2<f64>, sigma: f64, p: usize, q: usize) -> Result<Self> {
        let n = y.len();
        if w.nrows() != n {
            return Err(Error::InvalidDataset(format!(
                "y has {n} rows but W has {}",
                w.nrows()
            )));
        }
        if w.ncols() != p + q {
            return Err(Error::DimensionMismatch(format!(
                "W has {} columns, expected p+q = {}",
                w.ncols(),
                p + q
            )));
        }
        if p + q == 0 {
            return Err(Error::InvalidDataset("need at least one covariate".into()));
        }
        if n < p + q + 2 {
            return Err(Error::InvalidDataset(format!(
                "need n ≥ p+q+2 = {}, got {n}",
                p + q + 2
            )));
        }
        if sigma.is_nan() || sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidDataset(format!("sigma must be ≥ 0, got {sigma}")));
        }
        Ok(MaskedDataset { y, w, sigma, p, q })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn w(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }
}

/// Population parameters of the linear regression of y* on the covariates:
/// intercept b₀, slope vector b̄ = (b̄₁, b̄₂), and residual variance τ².
/// θ = (b₀, b̄)/τ² and φ = 1/τ² are the estimands the masked-data estimators
/// target.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPopulationParams {
    pub b0: f64,
    pub b_bar: Array1<f64>,
    pub tau2: f64,
    p: usize,
}

impl LinearPopulationParams {
    /// Covariate-block slice b̄₁ (length p).
    pub fn b1(&self) -> ArrayView1<'_, f64> {
        self.b_bar.slice(s![..self.p])
    }

    /// Confounder-block slice b̄₂ (length q).
    pub fn b2(&self) -> ArrayView1<'_, f64> {
        self.b_bar.slice(s![self.p..])
    }

    /// θ = (b₀, b̄)/τ², length p+q+1.
    pub fn theta(&self) -> Array1<f64> {
        let mut theta = Array1::<f64>::zeros(self.b_bar.len() + 1);
        theta[0] = self.b0 / self.tau2;
        for (i, &b) in self.b_bar.iter().enumerate() {
            theta[i + 1] = b / self.tau2;
        }
        theta
    }

    /// φ = 1/τ².
    pub fn phi(&self) -> f64 {
        1.0 / self.tau2
    }
}

/// Numerically stable logistic function, strictly inside (0, 1).
fn sigmoid(t: f64) -> f64 {
    let raw = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    raw.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Logistic coefficients implied by the mixture parameters.
///
/// β₁ solves Σβ₁ = (μ₁−μ₀)ᵀ through a Cholesky factorization; the intercept
/// is log(p₁/p₀) − ½(μ₁+μ₀)β₁ in the unconditional case and
/// γ₀ − ½(μ₁Σ⁻¹μ₁ᵀ − μ₀Σ⁻¹μ₀ᵀ) in the conditional case; β₂ = γ₁ − Cβ₁.
pub fn implied_logistic_coefficients(spec: &MixtureSpec) -> Result<LogisticCoefficients> {
    let l = linalg::cholesky(spec.sigma()).ok_or(Error::SigmaNotPositiveDefinite)?;
    let diff = &spec.mu1 - &spec.mu0;
    let beta1 = linalg::chol_solve(l.view(), diff.view());
    // ½(μ₁+μ₀)Σ⁻¹(μ₁−μ₀)ᵀ = ½(μ₁Σ⁻¹μ₁ᵀ − μ₀Σ⁻¹μ₀ᵀ): the same quadratic-form
    // difference in both model variants.
    let half_quad = 0.5 * (&spec.mu1 + &spec.mu0).dot(&beta1);
    match &spec.weights {
        ClassWeights::Marginal { p1 } => Ok(LogisticCoefficients {
            beta0: (p1 / (1.0 - p1)).ln() - half_quad,
            beta1,
            beta2: Array1::zeros(0),
        }),
        ClassWeights::Logistic { gamma0, gamma1 } => {
            let c = spec
                .confounder_loadings
                .as_ref()
                .ok_or(Error::ConditionalSpecRequired)?;
            let beta2 = gamma1 - &c.dot(&beta1);
            Ok(LogisticCoefficients {
                beta0: gamma0 - half_quad,
                beta1,
                beta2,
            })
        }
    }
}

/// P(y=1 | x, z) under the logistic model, overflow-safe.
///
/// Panics if the row lengths do not match the coefficient dimensions.
pub fn class_probability(
    coef: &LogisticCoefficients,
    x: ArrayView1<'_, f64>,
    z: ArrayView1<'_, f64>,
) -> f64 {
    assert_eq!(x.len(), coef.beta1.len(), "x length must match beta1");
    assert_eq!(z.len(), coef.beta2.len(), "z length must match beta2");
    sigmoid(coef.beta0 + x.dot(&coef.beta1) + z.dot(&coef.beta2))
}

/// Seed of the deterministic Monte Carlo oracle used for conditional-model
/// population moments (the confounder-dependent moments have no closed form
/// under logistic weights).
pub const POPULATION_ORACLE_SEED: u64 = 0x7031_6d61_736b_u64;

/// Default draw budget for the conditional-model moment oracle.
pub const DEFAULT_ORACLE_BUDGET: usize = 10_000_000;

/// Population linear-regression parameters (b₀, b̄, τ²) of y* on W* = (X*, Z*).
///
/// Unconditional specs are computed analytically; conditional specs use a
/// seeded Monte Carlo oracle with `oracle_budget` confounder draws, with all
/// conditional moments given Z integrated in closed form.
pub fn population_linear_params(
    spec: &MixtureSpec,
    oracle_budget: usize,
) -> Result<LinearPopulationParams> {
    population_linear_params_seeded(spec, oracle_budget, POPULATION_ORACLE_SEED)
}

/// Same as [`population_linear_params`] with an explicit oracle seed; exposed
/// so tests can estimate the oracle's Monte Carlo error from batches.
pub fn population_linear_params_seeded(
    spec: &MixtureSpec,
    oracle_budget: usize,
    oracle_seed: u64,
) -> Result<LinearPopulationParams> {
    match &spec.weights {
        ClassWeights::Marginal { p1 } => unconditional_population_params(spec, *p1),
        ClassWeights::Logistic { .. } => {
            conditional_population_params(spec, oracle_budget, oracle_seed)
        }
    }
}

fn unconditional_population_params(spec: &MixtureSpec, p1: f64) -> Result<LinearPopulationParams> {
    let p = spec.p();
    let v = p1 * (1.0 - p1); // Var(y*)
    let diff = &spec.mu1 - &spec.mu0;
    // Var(X*) = Σ + p₀p₁ dᵀd,  Cov(X*, y*) = p₀p₁ dᵀ
    let mut var_x = spec.sigma.clone();
    for i in 0..p {
        for j in 0..p {
            var_x[(i, j)] += v * diff[i] * diff[j];
        }
    }
    let cov_xy = diff.mapv(|d| v * d);
    let l = linalg::cholesky(var_x.view()).ok_or(Error::DegenerateCovariates)?;
    let b_bar = linalg::chol_solve(l.view(), cov_xy.view());
    let tau2 = v - cov_xy.dot(&b_bar);
    if tau2.is_nan() || tau2 <= 0.0 {
        return Err(Error::DegenerateCovariates);
    }
    let mean_x = spec.mu0.mapv(|m| m * (1.0 - p1)) + spec.mu1.mapv(|m| m * p1);
    let b0 = p1 - mean_x.dot(&b_bar);
    Ok(LinearPopulationParams { b0, b_bar, tau2, p })
}

/// Rao-Blackwellized Monte Carlo over Z ~ Uniform([−1,1]^q): conditional on
/// Z, every first and second moment of (y*, X*, Z*) is available in closed
/// form, so the oracle only averages those closed forms over Z draws.
fn conditional_population_params(
    spec: &MixtureSpec,
    oracle_budget: usize,
    oracle_seed: u64,
) -> Result<LinearPopulationParams> {
    if oracle_budget == 0 {
        return Err(Error::InvalidConfig("oracle budget must be positive".into()));
    }
    let p = spec.p();
    let q = spec.q();
    let c = spec.confounder_loadings.as_ref().ok_or(Error::ConditionalSpecRequired)?;
    let mut rng = ChaCha8Rng::seed_from_u64(oracle_seed);

    let mut s_y = 0.0f64; // E[y] accumulator (= E[y²])
    let mut s_x = Array1::<f64>::zeros(p);
    let mut s_z = Array1::<f64>::zeros(q);
    let mut s_xx = Array2::<f64>::zeros((p, p));
    let mut s_xz = Array2::<f64>::zeros((p, q));
    let mut s_zz = Array2::<f64>::zeros((q, q));
    let mut s_xy = Array1::<f64>::zeros(p);
    let mut s_zy = Array1::<f64>::zeros(q);

    let mut z = Array1::<f64>::zeros(q);
    for _ in 0..oracle_budget {
        for zi in z.iter_mut() {
            *zi = rng.random_range(-1.0..1.0);
        }
        let w1 = spec.class1_weight(z.view());
        let w0 = 1.0 - w1;
        let zc = z.dot(c); // 1×p row
        let m1 = &spec.mu1 + &zc; // E[X | y=1, Z]
        let m0 = &spec.mu0 + &zc;
        let mx = w1 * &m1 + w0 * &m0;

        s_y += w1;
        s_x += &mx;
        s_z += &z;
        for i in 0..p {
            s_xy[i] += w1 * m1[i];
            for j in 0..p {
                s_xx[(i, j)] += w1 * m1[i] * m1[j] + w0 * m0[i] * m0[j];
            }
            for j in 0..q {
                s_xz[(i, j)] += mx[i] * z[j];
            }
        }
        for i in 0..q {
            s_zy[i] += z[i] * w1;
            for j in 0..q {
                s_zz[(i, j)] += z[i] * z[j];
            }
        }
    }

    let inv = 1.0 / oracle_budget as f64;
    let e_y = s_y * inv;
    let e_x = s_x.mapv(|v| v * inv);
    let e_z = s_z.mapv(|v| v * inv);
    let d = p + q;
    // Var(W) and Cov(W, y) from the accumulated raw moments; the Gaussian
    // within-class covariance Σ enters only the X-block.
    let mut var_w = Array2::<f64>::zeros((d, d));
    let mut cov_wy = Array1::<f64>::zeros(d);
    for i in 0..p {
        cov_wy[i] = s_xy[i] * inv - e_x[i] * e_y;
        for j in 0..p {
            var_w[(i, j)] = spec.sigma[(i, j)] + s_xx[(i, j)] * inv - e_x[i] * e_x[j];
        }
        for j in 0..q {
            let v = s_xz[(i, j)] * inv - e_x[i] * e_z[j];
            var_w[(i, p + j)] = v;
            var_w[(p + j, i)] = v;
        }
    }
    for i in 0..q {
        cov_wy[p + i] = s_zy[i] * inv - e_z[i] * e_y;
        for j in 0..q {
            var_w[(p + i, p + j)] = s_zz[(i, j)] * inv - e_z[i] * e_z[j];
        }
    }

    let var_y = e_y - e_y * e_y; // E[y²] = E[y] for 0/1 outcomes
    let l = linalg::cholesky(var_w.view()).ok_or(Error::DegenerateCovariates)?;
    let b_bar = linalg::chol_solve(l.view(), cov_wy.view());
    let tau2 = var_y - cov_wy.dot(&b_bar);
    if tau2.is_nan() || tau2 <= 0.0 {
        return Err(Error::DegenerateCovariates);
    }
    let mut e_w = Array1::<f64>::zeros(d);
    e_w.slice_mut(s![..p]).assign(&e_x);
    e_w.slice_mut(s![p..]).assign(&e_z);
    let b0 = e_y - e_w.dot(&b_bar);
    Ok(LinearPopulationParams { b0, b_bar, tau2, p })
}
