//! Point and interval estimators for the logistic slope vector.
//!
//! Three estimators run on masked data (y, W):
//! - the naive conditional MLE, which solves the logistic score equation with
//!   the masked data substituted for the raw data (the score is linear in yᵢ,
//!   so it stays well defined for real-valued outcomes);
//! - the naive least squares θ̂ = b̂/τ̂², which ignores the added noise;
//! - the corrected least squares (cLS), which debiases the sufficient
//!   statistics: G = W̃ᵀW̃ − nσ²J replaces the Gram matrix and ‖y‖² − nσ²
//!   replaces the squared norm of the outcome, solving the corrected
//!   estimating equations in closed form.
//!
//! The cLS covariance is the sandwich Â⁻¹B̂Â⁻¹ of the estimating equations;
//! Â is assembled as the (negated) Jacobian of the mean estimating function
//! and B̂ as the empirical second moment of the per-row estimating functions.
//! Reported per-coefficient variances are v_jj/n, the usual M-estimation
//! scaling for an asymptotic covariance of √n(θ̂ − θ).
//!
//! On raw data the mixture-model MLE for β₁ has the closed form
//! Σ̂⁻¹(μ̂₁ − μ̂₀)ᵀ and coincides exactly with the OLS-derived b̂₁/τ̂²
//! (divisor n in τ̂² is what makes the identity exact).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{MaskedDataset, RawDataset};

/// Newton defaults for the logistic score solver.
pub const DEFAULT_SCORE_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;

/// Condition-number threshold above which a warning is recorded.
const CONDITION_WARN: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    NaiveMle,
    NaiveLs,
    CorrectedLs,
    MixtureMle,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::NaiveMle => "naive_mle",
            Method::NaiveLs => "naive_ls",
            Method::CorrectedLs => "corrected_ls",
            Method::MixtureMle => "mixture_mle",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub converged: bool,
    pub condition_warnings: Vec<String>,
}

/// A fitted estimate: θ̂ (length p+q+1, intercept first), the precision
/// parameter φ̂ when the method has one, the covariance of √n(θ̂ − θ), and
/// per-component confidence intervals for the β₁ slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimate {
    pub method: Method,
    pub theta_hat: Array1<f64>,
    pub phi_hat: Option<f64>,
    /// (p+q+1)² covariance of √n(θ̂ − θ); per-coefficient SE is √(v_jj/n).
    pub cov: Option<Array2<f64>>,
    /// Confidence intervals for β₁ components, in slice order.
    pub ci: Option<Vec<(f64, f64)>>,
    pub alpha: f64,
    pub diagnostics: Diagnostics,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

impl CoefficientEstimate {
    /// β̂₁: components 2..p+1 of θ̂.
    pub fn beta1_hat(&self) -> ArrayView1<'_, f64> {
        self.theta_hat.slice(s![1..=self.p])
    }
}

/// Per-row value of the corrected estimating equations.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatingFunctionValue {
    pub m_theta: Array1<f64>,
    pub m_phi: f64,
}

/// OLS fit of y on (1, W): returns b̂ and τ̂² = (yᵀy − yᵀW̃b̂)/n.
///
/// The solve goes through a Cholesky factorization of the Gram matrix,
/// matching the closed-form normal equations; the divisor-n residual
/// variance is what makes the mixture-MLE identity exact.
pub fn ols_fit(y: ArrayView1<'_, f64>, w: ArrayView2<'_, f64>) -> Result<(Array1<f64>, f64)> {
    let n = y.len();
    let k = w.ncols() + 1;
    if w.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "y has {n} rows, W has {}",
            w.nrows()
        )));
    }
    if n <= k {
        return Err(Error::SingularDesign);
    }
    let wt = linalg::augment_ones(w);
    let gram = wt.t().dot(&wt);
    let l = linalg::cholesky(gram.view()).ok_or(Error::SingularDesign)?;
    let wty = wt.t().dot(&y);
    let b = linalg::chol_solve(l.view(), wty.view());
    let tau2 = (y.dot(&y) - wty.dot(&b)) / n as f64;
    Ok((b, tau2.max(0.0)))
}

/// Gaussian-mixture MLE for β₁ on raw data (q = 0): Σ̂⁻¹(μ̂₁ − μ̂₀)ᵀ with
/// class means and the pooled covariance (divisor n).
pub fn mixture_mle_beta1(raw: &RawDataset) -> Result<Array1<f64>> {
    if raw.q() != 0 {
        return Err(Error::InvalidDataset(
            "mixture MLE is defined for q = 0 covariate blocks".into(),
        ));
    }
    let n = raw.n();
    let p = raw.p();
    let y = raw.y_star();
    let x = raw.x_star();
    let n1 = y.iter().filter(|&&v| v == 1.0).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::DegenerateClass);
    }
    let mut mu0 = Array1::<f64>::zeros(p);
    let mut mu1 = Array1::<f64>::zeros(p);
    for (i, row) in x.rows().into_iter().enumerate() {
        if y[i] == 1.0 {
            mu1 += &row;
        } else {
            mu0 += &row;
        }
    }
    mu0 /= n0 as f64;
    mu1 /= n1 as f64;
    let mut pooled = Array2::<f64>::zeros((p, p));
    for (i, row) in x.rows().into_iter().enumerate() {
        let mu = if y[i] == 1.0 { &mu1 } else { &mu0 };
        for a in 0..p {
            let da = row[a] - mu[a];
            for b in a..p {
                pooled[(a, b)] += da * (row[b] - mu[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            pooled[(a, b)] /= n as f64;
            pooled[(b, a)] = pooled[(a, b)];
        }
    }
    let l = linalg::cholesky(pooled.view()).ok_or(Error::SingularPooledCovariance)?;
    let diff = &mu1 - &mu0;
    Ok(linalg::chol_solve(l.view(), diff.view()))
}

/// Solve the logistic score equation S(β) = (1/n) Σᵢ (yᵢ − σ(W̃ᵢβ)) W̃ᵢᵀ = 0
/// by Newton iteration with step halving, starting from β = 0.
///
/// y may be real valued (the score is linear in yᵢ), which is exactly how the
/// naive conditional MLE is applied to masked data. Complete separation on
/// raw binary data makes the iteration diverge and raises `NoConvergence`.
pub fn solve_logistic_score(
    y: ArrayView1<'_, f64>,
    w: ArrayView2<'_, f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Array1<f64>> {
    let (beta, _) = newton_logistic(y, w, tol, max_iter)?;
    Ok(beta)
}

/// Newton solver returning the root and the mean negative Jacobian
/// H = (1/n) Σ σᵢ(1−σᵢ) W̃ᵢᵀW̃ᵢ evaluated at the root.
fn newton_logistic(
    y: ArrayView1<'_, f64>,
    w: ArrayView2<'_, f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = y.len();
    let k = w.ncols() + 1;
    if w.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "y has {n} rows, W has {}",
            w.nrows()
        )));
    }
    let wt = linalg::augment_ones(w);
    let nf = n as f64;
    // weights below this count as numerically pinned at 0 or 1
    const PIN_WEIGHT: f64 = 1e-9;

    let score = |beta: &Array1<f64>| -> (Array1<f64>, Array2<f64>, usize) {
        let mut s = Array1::<f64>::zeros(k);
        let mut h = Array2::<f64>::zeros((k, k));
        let mut pinned = 0usize;
        for (i, row) in wt.rows().into_iter().enumerate() {
            let eta = row.dot(beta);
            let mu = stable_logistic(eta);
            let resid = y[i] - mu;
            let wgt = mu * (1.0 - mu);
            if wgt < PIN_WEIGHT {
                pinned += 1;
            }
            for a in 0..k {
                s[a] += resid * row[a];
                for b in a..k {
                    h[(a, b)] += wgt * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                h[(a, b)] /= nf;
                h[(b, a)] = h[(a, b)];
            }
        }
        (s / nf, h, pinned)
    };

    let mut beta = Array1::<f64>::zeros(k);
    let (mut s, mut h, mut pinned) = score(&beta);
    let mut snorm = sup_norm(s.view());
    for iter in 0..max_iter {
        // every fitted probability pinned at 0/1 means the iterate ran off to
        // ±∞ chasing a nonexistent root (complete separation)
        if pinned == n {
            return Err(Error::NoConvergence { iterations: iter });
        }
        if snorm <= tol {
            return Ok((beta, h));
        }
        let l = match linalg::cholesky(h.view()) {
            Some(l) => l,
            None => return Err(Error::NoConvergence { iterations: iter }),
        };
        let mut step = linalg::chol_solve(l.view(), s.view());
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &beta + &step;
            let (s_new, h_new, pinned_new) = score(&candidate);
            let n_new = sup_norm(s_new.view());
            if n_new < snorm {
                beta = candidate;
                s = s_new;
                h = h_new;
                pinned = pinned_new;
                snorm = n_new;
                accepted = true;
                break;
            }
            mapv_halve(&mut step);
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations: iter });
        }
    }
    if snorm <= tol && pinned < n {
        Ok((beta, h))
    } else {
        Err(Error::NoConvergence { iterations: max_iter })
    }
}

fn mapv_halve(step: &mut Array1<f64>) {
    step.mapv_inplace(|v| 0.5 * v);
}

fn sup_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn stable_logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Naive conditional MLE on masked data with Wald confidence intervals from
/// the inverse observed information.
pub fn naive_cmle(masked: &MaskedDataset, alpha: f64) -> Result<CoefficientEstimate> {
    check_alpha(alpha)?;
    let (beta, h) = newton_logistic(masked.y(), masked.w(), DEFAULT_SCORE_TOL, DEFAULT_MAX_ITER)?;
    // Var(β̂) ≈ H⁻¹/n: store H⁻¹ so SE_j = √(v_jj/n) shrinks as n^{-1/2}
    let k = beta.len();
    let l = linalg::cholesky(h.view()).ok_or(Error::NonInvertibleJacobian)?;
    let cov = linalg::chol_solve_mat(l.view(), Array2::<f64>::eye(k).view());
    let mut diagnostics = Diagnostics { converged: true, condition_warnings: Vec::new() };
    let cond = linalg::chol_condition_estimate(l.view());
    if cond > CONDITION_WARN {
        diagnostics
            .condition_warnings
            .push(format!("observed information condition estimate {cond:.3e}"));
    }
    let p = masked.p();
    let ci = confidence_intervals(beta.slice(s![1..=p]), &cov, masked.n(), alpha)?;
    Ok(CoefficientEstimate {
        method: Method::NaiveMle,
        theta_hat: beta,
        phi_hat: None,
        cov: Some(cov),
        ci: Some(ci),
        alpha,
        diagnostics,
        n: masked.n(),
        p,
        q: masked.q(),
    })
}

/// Shared closed-form machinery for the (corrected) least-squares estimator.
/// With `sigma = 0` this is exactly the naive least squares.
fn ls_point(
    masked: &MaskedDataset,
    sigma: f64,
) -> Result<(Array1<f64>, f64, Vec<String>)> {
    let n = masked.n();
    let nf = n as f64;
    let wt = linalg::augment_ones(masked.w());
    let k = wt.ncols();
    let mut g = wt.t().dot(&wt);
    if sigma > 0.0 {
        let shift = nf * sigma * sigma;
        for j in 1..k {
            g[(j, j)] -= shift;
        }
    }
    let l = linalg::cholesky(g.view()).ok_or(if sigma > 0.0 {
        Error::NoiseDominatedDesign
    } else {
        Error::SingularDesign
    })?;
    let mut warnings = Vec::new();
    let cond = linalg::chol_condition_estimate(l.view());
    if cond > CONDITION_WARN {
        warnings.push(format!("corrected Gram condition estimate {cond:.3e}"));
    }
    let y = masked.y();
    let wty = wt.t().dot(&y);
    let ginv_wty = linalg::chol_solve(l.view(), wty.view());
    let yty = y.dot(&y);
    let d = yty - nf * sigma * sigma - wty.dot(&ginv_wty);
    // at σ=0 a perfect fit leaves D at rounding level: τ̂² = 0 up to noise
    let floor = if sigma > 0.0 { 0.0 } else { 1e-12 * yty };
    if d.is_nan() || d <= floor {
        return Err(if sigma > 0.0 {
            Error::NoiseDominatedResponse
        } else {
            Error::ZeroResidualVariance
        });
    }
    let phi = nf / d;
    let theta = ginv_wty.mapv(|v| v * phi);
    Ok((theta, phi, warnings))
}

fn ls_estimate(masked: &MaskedDataset, sigma: f64, alpha: f64, method: Method) -> Result<CoefficientEstimate> {
    check_alpha(alpha)?;
    let (theta, phi, warnings) = ls_point(masked, sigma)?;
    let cov = sandwich_covariance(masked, sigma, theta.view(), phi)?;
    let p = masked.p();
    let ci = confidence_intervals(theta.slice(s![1..=p]), &cov, masked.n(), alpha)?;
    Ok(CoefficientEstimate {
        method,
        theta_hat: theta,
        phi_hat: Some(phi),
        cov: Some(cov),
        ci: Some(ci),
        alpha,
        diagnostics: Diagnostics { converged: true, condition_warnings: warnings },
        n: masked.n(),
        p,
        q: masked.q(),
    })
}

/// Naive least squares on masked data: θ̂ = b̂/τ̂² with the noise ignored.
/// Covariance and intervals use the sandwich machinery with σ treated as 0.
pub fn naive_ls(masked: &MaskedDataset, alpha: f64) -> Result<CoefficientEstimate> {
    ls_estimate(masked, 0.0, alpha, Method::NaiveLs)
}

/// Corrected least squares: φ̂⁽ᶜ⁾ = n/D and θ̂⁽ᶜ⁾ = φ̂⁽ᶜ⁾G⁻¹W̃ᵀy with
/// G = W̃ᵀW̃ − nσ²J and D = ‖y‖² − nσ² − yᵀW̃G⁻¹W̃ᵀy.
///
/// Failure modes (G not positive definite, D ≤ 0) signal that the replicate
/// should be recorded as failed, not crash a batch.
pub fn corrected_ls(masked: &MaskedDataset, alpha: f64) -> Result<CoefficientEstimate> {
    ls_estimate(masked, masked.sigma(), alpha, Method::CorrectedLs)
}

/// Per-row corrected estimating function at (θ, φ):
/// m_θ = W̃ᵢᵀyᵢ − (1/φ)(W̃ᵢᵀW̃ᵢ − σ²J)θ and
/// m_φ = 1/(2φ) − ½(yᵢ² − σ²) + (1/(2φ²))θᵀ(W̃ᵢᵀW̃ᵢ − σ²J)θ,
/// with W̃ᵢᵀW̃ᵢ the outer product of the augmented row (1, Wᵢ).
pub fn estimating_function(
    w_row: ArrayView1<'_, f64>,
    y_i: f64,
    sigma: f64,
    theta: ArrayView1<'_, f64>,
    phi: f64,
) -> EstimatingFunctionValue {
    let k = w_row.len() + 1;
    assert_eq!(theta.len(), k, "theta length must be p+q+1");
    let mut out = vec![0.0f64; k + 1];
    fill_estimating_function(w_row, y_i, sigma, theta, phi, &mut out);
    EstimatingFunctionValue {
        m_theta: Array1::from_vec(out[..k].to_vec()),
        m_phi: out[k],
    }
}

/// Write (m_θ, m_φ) into `out` (length k+1) without allocating.
fn fill_estimating_function(
    w_row: ArrayView1<'_, f64>,
    y_i: f64,
    sigma: f64,
    theta: ArrayView1<'_, f64>,
    phi: f64,
    out: &mut [f64],
) {
    let k = w_row.len() + 1;
    let s2 = sigma * sigma;
    // uᵀθ with u = (1, Wᵢ)
    let mut ut_theta = theta[0];
    for j in 1..k {
        ut_theta += w_row[j - 1] * theta[j];
    }
    // J θ zeroes the intercept slot
    let mut theta_j_theta = 0.0;
    for j in 1..k {
        theta_j_theta += theta[j] * theta[j];
    }
    let inv_phi = 1.0 / phi;
    out[0] = y_i - inv_phi * ut_theta;
    for j in 1..k {
        out[j] = w_row[j - 1] * y_i - inv_phi * (w_row[j - 1] * ut_theta - s2 * theta[j]);
    }
    let quad = ut_theta * ut_theta - s2 * theta_j_theta;
    out[k] = 0.5 * inv_phi - 0.5 * (y_i * y_i - s2) + 0.5 * inv_phi * inv_phi * quad;
}

/// The estimated "bread" of the sandwich: the (p+q+2)-square negated Jacobian
/// of the mean estimating function at (θ̂, φ̂), assembled from
/// G = W̃ᵀW̃ − nσ²J. The sandwich is invariant to the global sign.
pub fn estimating_bread(
    masked: &MaskedDataset,
    sigma: f64,
    theta: ArrayView1<'_, f64>,
    phi: f64,
) -> Array2<f64> {
    let n = masked.n() as f64;
    let wt = linalg::augment_ones(masked.w());
    let k = wt.ncols();
    let mut g = wt.t().dot(&wt);
    if sigma > 0.0 {
        let shift = n * sigma * sigma;
        for j in 1..k {
            g[(j, j)] -= shift;
        }
    }
    let g_theta = g.dot(&theta);
    let quad = theta.dot(&g_theta);
    let mut bread = Array2::<f64>::zeros((k + 1, k + 1));
    for a in 0..k {
        for b in 0..k {
            bread[(a, b)] = g[(a, b)] / (n * phi);
        }
        bread[(a, k)] = -g_theta[a] / (n * phi * phi);
        bread[(k, a)] = -g_theta[a] / (n * phi * phi);
    }
    bread[(k, k)] = 0.5 / (phi * phi) + quad / (n * phi * phi * phi);
    bread
}

/// Empirical second moment B̂ = (1/n) Σᵢ mᵢmᵢᵀ of the estimating functions.
fn estimating_middle(
    masked: &MaskedDataset,
    sigma: f64,
    theta: ArrayView1<'_, f64>,
    phi: f64,
) -> Array2<f64> {
    let n = masked.n();
    let k = masked.p() + masked.q() + 1;
    let mut b = Array2::<f64>::zeros((k + 1, k + 1));
    let mut m = vec![0.0f64; k + 1];
    let y = masked.y();
    for (i, row) in masked.w().rows().into_iter().enumerate() {
        fill_estimating_function(row, y[i], sigma, theta, phi, &mut m);
        for a in 0..=k {
            for c in a..=k {
                b[(a, c)] += m[a] * m[c];
            }
        }
    }
    let nf = n as f64;
    for a in 0..=k {
        for c in a..=k {
            b[(a, c)] /= nf;
            b[(c, a)] = b[(a, c)];
        }
    }
    b
}

/// Sandwich covariance Â⁻¹B̂Â⁻¹ of the corrected estimating equations,
/// reduced to its θ block (a (p+q+1)-square matrix). Downstream confidence
/// intervals use per-coefficient variance v_jj/n.
pub fn sandwich_covariance(
    masked: &MaskedDataset,
    sigma: f64,
    theta: ArrayView1<'_, f64>,
    phi: f64,
) -> Result<Array2<f64>> {
    if phi.is_nan() || phi <= 0.0 || !phi.is_finite() {
        return Err(Error::InvalidCovariance);
    }
    let k = masked.p() + masked.q() + 1;
    if theta.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, expected {k}",
            theta.len()
        )));
    }
    let bread = estimating_bread(masked, sigma, theta, phi);
    let middle = estimating_middle(masked, sigma, theta, phi);
    let half = linalg::lu_solve_mat(bread.view(), middle.view())?; // Â⁻¹B̂
    let full = linalg::lu_solve_mat(bread.view(), half.t().to_owned().view())?; // Â⁻¹B̂Â⁻¹
    Ok(full.slice(s![..k, ..k]).to_owned())
}

/// Two-sided confidence intervals β̂₁ⱼ ± z_{α/2}·√(v_{j+1,j+1}/n) from the
/// θ-block covariance returned by [`sandwich_covariance`].
pub fn confidence_intervals(
    beta1_hat: ArrayView1<'_, f64>,
    cov: &Array2<f64>,
    n: usize,
    alpha: f64,
) -> Result<Vec<(f64, f64)>> {
    check_alpha(alpha)?;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut out = Vec::with_capacity(beta1_hat.len());
    for (j, &point) in beta1_hat.iter().enumerate() {
        let var = cov[(j + 1, j + 1)];
        if !var.is_finite() || var < 0.0 {
            return Err(Error::InvalidCovariance);
        }
        let half = z * (var / n as f64).sqrt();
        out.push((point - half, point + half));
    }
    Ok(out)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// Standard normal quantile Φ⁻¹(prob): Acklam's rational approximation
/// followed by one Newton refinement against the erfc-based CDF, accurate to
/// well below 1e−9.
pub fn normal_quantile(prob: f64) -> f64 {
    assert!(prob > 0.0 && prob < 1.0, "quantile needs prob in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if prob < P_LOW {
        let q = (-2.0 * prob.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if prob <= 1.0 - P_LOW {
        let q = prob - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - prob).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // one Newton step: x ← x − (Φ(x) − prob)/φ(x)
    let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        x - (cdf - prob) / pdf
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ar1_covariance, MixtureSpec};
    use crate::sampling::{
        apply_tm2_noise, apply_tm2_noise_with_mode, sample_mixture, MaskMode, SeedSpec,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn table1_spec() -> MixtureSpec {
        let sigma = ar1_covariance(3, 0.5);
        let mu1 = array![1.0, 1.0, 1.0];
        let beta1 = array![1.0, -1.0, 0.0];
        let mu0 = &mu1 - &sigma.dot(&beta1);
        MixtureSpec::unconditional(mu0, mu1, sigma, 0.5).unwrap()
    }

    #[test]
    fn ols_constant_outcome() {
        let w = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![2.5, 2.5, 2.5, 2.5];
        let (b, tau2) = ols_fit(y.view(), w.view()).unwrap();
        assert_abs_diff_eq!(b[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 0.0, epsilon = 1e-12);
        assert!(tau2.abs() < 1e-12);
    }

    #[test]
    fn ols_perfect_fit() {
        let w = array![[0.0, 1.0], [1.0, -1.0], [2.0, 0.5], [3.0, 2.0], [0.5, 0.0]];
        let truth = array![0.7, -0.3, 1.1];
        let wt = linalg::augment_ones(w.view());
        let y = wt.dot(&truth);
        let (b, tau2) = ols_fit(y.view(), w.view()).unwrap();
        for (a, t) in b.iter().zip(truth.iter()) {
            assert_abs_diff_eq!(a, t, epsilon = 1e-10);
        }
        assert!(tau2 < 1e-12);
    }

    #[test]
    fn ols_hand_oracle() {
        // normal equations by hand: [4 6; 6 14] b = [2; 5] → b = (−0.1, 0.4),
        // τ̂² = (yᵀy − yᵀW̃b̂)/n = (2 − 1.8)/4 = 0.05
        let w = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![0.0, 0.0, 1.0, 1.0];
        let (b, tau2) = ols_fit(y.view(), w.view()).unwrap();
        assert_abs_diff_eq!(b[0], -0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(tau2, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn ols_rejects_rank_deficiency() {
        let w = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0], [5.0, 10.0]];
        let y = array![0.0, 1.0, 0.0, 1.0, 0.0];
        assert!(matches!(ols_fit(y.view(), w.view()), Err(Error::SingularDesign)));
    }

    #[test]
    fn mixture_mle_hand_dataset() {
        // class means 1 and 3, pooled variance 2/3 → β̂₁ = 2/(2/3) = 3
        let y = array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let x = array![[0.0], [1.0], [2.0], [2.0], [3.0], [4.0]];
        let raw = RawDataset::new(y, x, None).unwrap();
        let beta = mixture_mle_beta1(&raw).unwrap();
        assert_abs_diff_eq!(beta[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn mixture_mle_degenerate_cases() {
        let y = array![1.0, 1.0, 1.0];
        let x = array![[0.0], [1.0], [2.0]];
        let raw = RawDataset::new(y, x, None).unwrap();
        assert!(matches!(mixture_mle_beta1(&raw), Err(Error::DegenerateClass)));

        // identical X within each class: pooled covariance is zero
        let y = array![0.0, 0.0, 1.0, 1.0];
        let x = array![[1.0], [1.0], [2.0], [2.0]];
        let raw = RawDataset::new(y, x, None).unwrap();
        assert!(matches!(
            mixture_mle_beta1(&raw),
            Err(Error::SingularPooledCovariance)
        ));
    }

    #[test]
    fn haggstrom_identity_on_sampled_data() {
        let spec = table1_spec();
        for seed in 0..5 {
            let raw = sample_mixture(&spec, 500, SeedSpec::new(1000 + seed, 0)).unwrap();
            let mle = mixture_mle_beta1(&raw).unwrap();
            let (b, tau2) = ols_fit(raw.y_star(), raw.x_star()).unwrap();
            let scale = mle.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for j in 0..3 {
                let ols_slope = b[j + 1] / tau2;
                assert!(
                    (mle[j] - ols_slope).abs() <= 1e-8 * scale,
                    "seed {seed}, component {j}: {} vs {}",
                    mle[j],
                    ols_slope
                );
            }
        }
    }

    #[test]
    fn score_solver_intercept_only() {
        let y = array![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let w = Array2::<f64>::zeros((10, 0));
        let beta = solve_logistic_score(y.view(), w.view(), 1e-10, 100).unwrap();
        let ybar: f64 = 0.3;
        assert_abs_diff_eq!(beta[0], (ybar / (1.0 - ybar)).ln(), epsilon = 1e-9);
    }

    #[test]
    fn score_solver_detects_separation() {
        let y = array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let x = array![[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]];
        assert!(matches!(
            solve_logistic_score(y.view(), x.view(), 1e-10, 100),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn score_solver_matches_irls_oracle() {
        let spec = table1_spec();
        let raw = sample_mixture(&spec, 10_000, SeedSpec::new(77, 0)).unwrap();
        let beta = solve_logistic_score(raw.y_star(), raw.x_star(), 1e-12, 100).unwrap();
        let oracle = irls_oracle(raw.y_star(), raw.x_star());
        for (a, b) in beta.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-6, "solver {a} vs IRLS {b}");
        }
        // root check: returned β satisfies ‖S(β)‖∞ ≤ tol
        let wt = linalg::augment_ones(raw.x_star());
        let mut s = Array1::<f64>::zeros(4);
        for (i, row) in wt.rows().into_iter().enumerate() {
            let mu = stable_logistic(row.dot(&beta));
            for a in 0..4 {
                s[a] += (raw.y_star()[i] - mu) * row[a];
            }
        }
        s /= raw.n() as f64;
        assert!(sup_norm(s.view()) <= 1e-12);
    }

    #[test]
    fn naive_ls_zero_residual_variance() {
        let y = Array1::from_elem(10, 0.5);
        let mut w = Array2::<f64>::zeros((10, 1));
        for i in 0..10 {
            w[(i, 0)] = i as f64;
        }
        let masked = MaskedDataset::new(y, w, 0.0, 1, 0).unwrap();
        assert!(matches!(naive_ls(&masked, 0.05), Err(Error::ZeroResidualVariance)));
    }

    #[test]
    fn corrected_equals_naive_at_zero_sigma() {
        let spec = table1_spec();
        let raw = sample_mixture(&spec, 400, SeedSpec::new(88, 0)).unwrap();
        let masked =
            apply_tm2_noise_with_mode(&raw, 0.0, SeedSpec::new(88, 1), MaskMode::Haar).unwrap();
        let a = naive_ls(&masked, 0.05).unwrap();
        let b = corrected_ls(&masked, 0.05).unwrap();
        for (x, y) in a.theta_hat.iter().zip(b.theta_hat.iter()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert_eq!(a.phi_hat, b.phi_hat);
    }

    #[test]
    fn corrected_ls_matches_direct_formula_oracle() {
        // fixed 6-row, p=1 dataset; oracle evaluates the closed form with its
        // own scalar arithmetic (2×2 adjugate inverse)
        let y = array![0.1, 0.9, 0.4, 1.2, -0.3, 0.7];
        let w = array![[0.5], [1.5], [0.2], [2.0], [-1.0], [1.0]];
        let sigma = 0.1;
        let masked = MaskedDataset::new(y.clone(), w.clone(), sigma, 1, 0).unwrap();
        let est = corrected_ls(&masked, 0.05).unwrap();

        let n = 6.0f64;
        let sw: f64 = w.column(0).sum();
        let sww: f64 = w.column(0).iter().map(|v| v * v).sum();
        let sy: f64 = y.sum();
        let swy: f64 = w.column(0).iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let syy: f64 = y.iter().map(|v| v * v).sum();
        // G = [[n, sw], [sw, sww − nσ²]]
        let g11 = n;
        let g12 = sw;
        let g22 = sww - n * sigma * sigma;
        let det = g11 * g22 - g12 * g12;
        let (i11, i12, i22) = (g22 / det, -g12 / det, g11 / det);
        let u0 = i11 * sy + i12 * swy;
        let u1 = i12 * sy + i22 * swy;
        let d = syy - n * sigma * sigma - (sy * u0 + swy * u1);
        let phi = n / d;
        let theta = [phi * u0, phi * u1];
        assert_abs_diff_eq!(est.phi_hat.unwrap(), phi, epsilon = 1e-10 * phi.abs());
        assert_abs_diff_eq!(est.theta_hat[0], theta[0], epsilon = 1e-10 * theta[0].abs().max(1.0));
        assert_abs_diff_eq!(est.theta_hat[1], theta[1], epsilon = 1e-10 * theta[1].abs().max(1.0));
    }

    #[test]
    fn estimating_function_reduces_at_zero_sigma() {
        let w_row = array![0.7, -1.2];
        let theta = array![0.3, 1.1, -0.4];
        let phi = 1.7;
        let y_i = 0.65;
        let at_zero = estimating_function(w_row.view(), y_i, 0.0, theta.view(), phi);
        // raw-data estimating functions: same formulas with σ = 0
        let u = array![1.0, 0.7, -1.2];
        let ut_theta = u.dot(&theta);
        for j in 0..3 {
            let expect = u[j] * y_i - u[j] * ut_theta / phi;
            assert_abs_diff_eq!(at_zero.m_theta[j], expect, epsilon = 1e-14);
        }
        let expect_phi = 0.5 / phi - 0.5 * y_i * y_i + ut_theta * ut_theta / (2.0 * phi * phi);
        assert_abs_diff_eq!(at_zero.m_phi, expect_phi, epsilon = 1e-14);
    }

    #[test]
    fn estimating_function_plug_in_values() {
        // θ = 0, φ = 1, σ = 0 → m_θ = W̃ᵢᵀyᵢ, m_φ = ½ − ½yᵢ²
        let w_row = array![2.0, -0.5];
        let theta = array![0.0, 0.0, 0.0];
        let v = estimating_function(w_row.view(), 0.8, 0.0, theta.view(), 1.0);
        assert_abs_diff_eq!(v.m_theta[0], 0.8);
        assert_abs_diff_eq!(v.m_theta[1], 1.6);
        assert_abs_diff_eq!(v.m_theta[2], -0.4);
        assert_abs_diff_eq!(v.m_phi, 0.5 - 0.5 * 0.64, epsilon = 1e-15);
    }

    #[test]
    fn middle_matrix_is_psd() {
        let spec = table1_spec();
        let raw = sample_mixture(&spec, 100, SeedSpec::new(91, 0)).unwrap();
        let masked = apply_tm2_noise_with_mode(&raw, 0.5, SeedSpec::new(91, 1), MaskMode::Haar)
            .unwrap();
        let theta = array![0.2, 1.0, -1.0, 0.1];
        let b = estimating_middle(&masked, 0.5, theta.view(), 2.0);
        let mut rng = SeedSpec::new(91, 2).rng();
        for _ in 0..20 {
            let x = Array1::from_shape_simple_fn(5, || {
                rand::Rng::random_range(&mut rng, -1.0..1.0)
            });
            let qf = x.dot(&b.dot(&x));
            assert!(qf >= -1e-10, "quadratic form {qf}");
        }
    }

    #[test]
    fn bread_matches_finite_differences() {
        let spec = table1_spec();
        let raw = sample_mixture(&spec, 200, SeedSpec::new(93, 0)).unwrap();
        let masked = apply_tm2_noise_with_mode(&raw, 0.5, SeedSpec::new(93, 1), MaskMode::Haar)
            .unwrap();
        let est = corrected_ls(&masked, 0.05).unwrap();
        let theta = est.theta_hat.clone();
        let phi = est.phi_hat.unwrap();
        let bread = estimating_bread(&masked, 0.5, theta.view(), phi);
        let fd = finite_difference_jacobian(&masked, 0.5, &theta, phi);
        let scale = linalg::max_abs(bread.view());
        // central differences approximate the Jacobian A = −Â
        for a in 0..bread.nrows() {
            for b in 0..bread.ncols() {
                assert!(
                    (bread[(a, b)] + fd[(a, b)]).abs() <= 1e-5 * scale,
                    "bread ({a},{b}) {} vs −FD {}",
                    bread[(a, b)],
                    -fd[(a, b)]
                );
            }
        }
    }

    #[test]
    fn sandwich_rejects_bad_phi() {
        let spec = table1_spec();
        let raw = sample_mixture(&spec, 50, SeedSpec::new(95, 0)).unwrap();
        let masked = apply_tm2_noise_with_mode(&raw, 0.0, SeedSpec::new(95, 1), MaskMode::Identity)
            .unwrap();
        let theta = Array1::zeros(4);
        assert!(matches!(
            sandwich_covariance(&masked, 0.0, theta.view(), -1.0),
            Err(Error::InvalidCovariance)
        ));
    }

    #[test]
    fn estimates_bracket_their_own_point() {
        let spec = table1_spec();
        let raw = sample_mixture(&spec, 500, SeedSpec::new(97, 0)).unwrap();
        let masked = apply_tm2_noise(&raw, 0.5, SeedSpec::new(97, 1)).unwrap();
        for est in [
            naive_ls(&masked, 0.05).unwrap(),
            corrected_ls(&masked, 0.05).unwrap(),
            naive_cmle(&masked, 0.05).unwrap(),
        ] {
            let ci = est.ci.as_ref().unwrap();
            for (j, &point) in est.beta1_hat().iter().enumerate() {
                assert!(ci[j].0 <= point && point <= ci[j].1);
                let mid = 0.5 * (ci[j].0 + ci[j].1);
                assert!((mid - point).abs() <= 1e-10 * point.abs().max(1.0));
            }
        }
    }

    #[test]
    fn ill_conditioned_design_warns_but_fits() {
        let spec = table1_spec();
        let raw = sample_mixture(&spec, 300, SeedSpec::new(98, 0)).unwrap();
        let mut w = raw.combined_covariates();
        // shrinking one column squares into a Gram condition beyond 1e12
        // while staying numerically full rank
        for i in 0..w.nrows() {
            w[(i, 2)] *= 1e-7;
        }
        let masked = MaskedDataset::new(raw.y_star().to_owned(), w, 0.0, 3, 0).unwrap();
        let est = naive_ls(&masked, 0.05).unwrap();
        assert!(
            !est.diagnostics.condition_warnings.is_empty(),
            "expected a condition warning"
        );
        assert!(est.theta_hat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn quantile_known_values() {
        assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-5);
        assert!((normal_quantile(0.84) - 0.994457883).abs() < 1e-8);
        assert!((normal_quantile(0.5)).abs() < 1e-12);
        // round-trip through the erfc CDF at high accuracy
        for p in [1e-6, 0.01, 0.3, 0.5, 0.77, 0.99, 1.0 - 1e-6] {
            let x = normal_quantile(p);
            let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
            assert!((cdf - p).abs() < 1e-12, "p = {p}: cdf {cdf}");
        }
    }

    #[test]
    fn confidence_interval_edge_cases() {
        let beta = array![1.5];
        let mut cov = Array2::<f64>::zeros((2, 2));
        let ci = confidence_intervals(beta.view(), &cov, 100, 0.05).unwrap();
        assert_eq!(ci[0], (1.5, 1.5)); // zero variance degenerates to the point

        cov[(1, 1)] = -0.5;
        assert!(matches!(
            confidence_intervals(beta.view(), &cov, 100, 0.05),
            Err(Error::InvalidCovariance)
        ));

        cov[(1, 1)] = 2.0;
        let ci95 = confidence_intervals(beta.view(), &cov, 50, 0.05).unwrap();
        let ci99 = confidence_intervals(beta.view(), &cov, 50, 0.01).unwrap();
        // nesting and symmetry
        assert!(ci99[0].0 < ci95[0].0 && ci95[0].1 < ci99[0].1);
        let mid = 0.5 * (ci95[0].0 + ci95[0].1);
        assert!((mid - 1.5).abs() < 1e-10);
        // half-width oracle: alpha=0.32, unit variance, n=1
        let ci32 = confidence_intervals(
            array![0.0].view(),
            &array![[0.0, 0.0], [0.0, 1.0]],
            1,
            0.32,
        )
        .unwrap();
        assert!((ci32[0].1 - 0.994458).abs() < 1e-5);
    }

    /// Independent IRLS oracle with its own Gaussian elimination.
    fn irls_oracle(y: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let n = x.nrows();
        let k = x.ncols() + 1;
        let mut beta = vec![0.0f64; k];
        for _ in 0..60 {
            let mut info = vec![vec![0.0f64; k]; k];
            let mut score = vec![0.0f64; k];
            for i in 0..n {
                let mut eta = beta[0];
                for j in 1..k {
                    eta += x[(i, j - 1)] * beta[j];
                }
                let mu = 1.0 / (1.0 + (-eta).exp());
                let wgt = mu * (1.0 - mu);
                let row: Vec<f64> = std::iter::once(1.0)
                    .chain((0..k - 1).map(|j| x[(i, j)]))
                    .collect();
                for a in 0..k {
                    score[a] += (y[i] - mu) * row[a];
                    for b in 0..k {
                        info[a][b] += wgt * row[a] * row[b];
                    }
                }
            }
            // solve info · δ = score by Gauss-Jordan
            let mut aug = info.clone();
            for a in 0..k {
                aug[a].push(score[a]);
            }
            for col in 0..k {
                let piv = (col..k)
                    .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
                    .unwrap();
                aug.swap(col, piv);
                let d = aug[col][col];
                for v in aug[col][col..=k].iter_mut() {
                    *v /= d;
                }
                let pivot_row = aug[col].clone();
                for (r, row) in aug.iter_mut().enumerate() {
                    if r != col {
                        let f = row[col];
                        for (v, pv) in row[col..=k].iter_mut().zip(&pivot_row[col..=k]) {
                            *v -= f * pv;
                        }
                    }
                }
            }
            let mut max_step = 0.0f64;
            for a in 0..k {
                beta[a] += aug[a][k];
                max_step = max_step.max(aug[a][k].abs());
            }
            if max_step < 1e-13 {
                break;
            }
        }
        beta
    }

    /// Central finite-difference Jacobian of the mean estimating function.
    fn finite_difference_jacobian(
        masked: &MaskedDataset,
        sigma: f64,
        theta: &Array1<f64>,
        phi: f64,
    ) -> Array2<f64> {
        let k = theta.len();
        let mean_m = |theta: &Array1<f64>, phi: f64| -> Array1<f64> {
            let mut acc = Array1::<f64>::zeros(k + 1);
            let mut buf = vec![0.0f64; k + 1];
            for (i, row) in masked.w().rows().into_iter().enumerate() {
                fill_estimating_function(row, masked.y()[i], sigma, theta.view(), phi, &mut buf);
                for (a, v) in buf.iter().enumerate() {
                    acc[a] += v;
                }
            }
            acc / masked.n() as f64
        };
        let mut jac = Array2::<f64>::zeros((k + 1, k + 1));
        for col in 0..=k {
            let scale = if col < k { theta[col].abs().max(1.0) } else { phi.abs().max(1.0) };
            let h = 1e-6 * scale;
            let (plus, minus) = if col < k {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[col] += h;
                tm[col] -= h;
                (mean_m(&tp, phi), mean_m(&tm, phi))
            } else {
                (mean_m(theta, phi + h), mean_m(theta, phi - h))
            };
            for row in 0..=k {
                jac[(row, col)] = (plus[row] - minus[row]) / (2.0 * h);
            }
        }
        jac
    }
}
