//! Monte Carlo harness: run (generate → mask → estimate) scenarios in
//! parallel and aggregate bias, MSE, coverage, and significance proportions.
//!
//! Determinism contract: replicate r of a scenario draws its data from stream
//! 2r and its mask/noise from stream 2r+1 of the scenario's root seed, so the
//! report is a pure function of the configuration regardless of how many
//! worker threads execute the replicates. Aggregation folds per-replicate
//! records in replicate order.

use std::time::{Duration, Instant};

use ndarray::Array1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{corrected_ls, naive_cmle, naive_ls, CoefficientEstimate, Method};
use crate::model::{ar1_covariance, implied_logistic_coefficients, MixtureSpec, RawDataset};
use crate::sampling::{
    apply_tm2_noise, sample_conditional_mixture, sample_mixture, SeedSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Unconditional,
    Conditional,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Unconditional => "unconditional",
            ModelKind::Conditional => "conditional",
        }
    }
}

/// One scenario of the simulation grid.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    pub spec: MixtureSpec,
    pub n: usize,
    pub sigma: f64,
    pub reps: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub root_seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n <= self.spec.p() + self.spec.q() + 1 {
            return Err(Error::InvalidConfig(format!(
                "n must exceed p+q+1 = {}",
                self.spec.p() + self.spec.q() + 1
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.sigma.is_nan() || self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma must be ≥ 0, got {}",
                self.sigma
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method required".into()));
        }
        if self.methods.contains(&Method::MixtureMle) {
            return Err(Error::InvalidConfig(
                "mixture MLE runs on raw data, not in masked-data scenarios".into(),
            ));
        }
        let conditional = self.spec.is_conditional();
        match self.model {
            ModelKind::Conditional if !conditional => Err(Error::InvalidConfig(
                "model says conditional but spec has no confounders".into(),
            )),
            ModelKind::Unconditional if conditional => Err(Error::InvalidConfig(
                "model says unconditional but spec has confounders".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Aggregated metrics for one (method, coefficient) cell. Metrics are `None`
/// when every replicate failed for the method, never NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub method: Method,
    /// 1-based index into β₁ (matching the β₁..β_p table rows).
    pub coefficient: usize,
    pub truth: f64,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    pub coverage: Option<f64>,
    pub signif_prop: Option<f64>,
}

/// Per-method replicate accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub n_failed: usize,
    pub n_success: usize,
}

/// Scenario-level simulation report.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub model: ModelKind,
    pub n: usize,
    pub sigma: f64,
    pub reps: usize,
    pub alpha: f64,
    pub root_seed: u64,
    pub truth: Array1<f64>,
    pub cells: Vec<ReportCell>,
    pub outcomes: Vec<MethodOutcome>,
    /// Wall-clock time of the run; deliberately excluded from serialized
    /// reports so identical configs produce byte-identical files.
    pub wall_time: Duration,
}

impl SimulationReport {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }

    pub fn cell(&self, method: Method, coefficient: usize) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.coefficient == coefficient)
    }
}

/// Per-replicate result for one method: the β₁ estimates and their CIs.
type ReplicateFit = std::result::Result<(Vec<f64>, Vec<(f64, f64)>), Error>;

fn fit_method(method: Method, masked: &crate::model::MaskedDataset, alpha: f64) -> ReplicateFit {
    let est: CoefficientEstimate = match method {
        Method::NaiveMle => naive_cmle(masked, alpha)?,
        Method::NaiveLs => naive_ls(masked, alpha)?,
        Method::CorrectedLs => corrected_ls(masked, alpha)?,
        Method::MixtureMle => {
            return Err(Error::InvalidConfig(
                "mixture MLE runs on raw data, not in masked-data scenarios".into(),
            ))
        }
    };
    let beta1 = est.beta1_hat().to_vec();
    let ci = est.ci.clone().unwrap_or_default();
    Ok((beta1, ci))
}

/// Run one scenario. Replicates execute in parallel on the ambient rayon
/// pool; failed replicates are counted per method and excluded from the
/// metric denominators.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimulationReport> {
    config.validate()?;
    let start = Instant::now();
    let truth = implied_logistic_coefficients(&config.spec)?.beta1;
    let p = config.spec.p();

    let fits: Vec<Vec<ReplicateFit>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let data_seed = SeedSpec::new(config.root_seed, 2 * r as u64);
            let mask_seed = SeedSpec::new(config.root_seed, 2 * r as u64 + 1);
            let raw = match config.model {
                ModelKind::Unconditional => sample_mixture(&config.spec, config.n, data_seed),
                ModelKind::Conditional => {
                    sample_conditional_mixture(&config.spec, config.n, data_seed)
                }
            }
            .expect("config validated");
            let masked = apply_tm2_noise(&raw, config.sigma, mask_seed).expect("valid raw data");
            config
                .methods
                .iter()
                .map(|&m| fit_method(m, &masked, config.alpha))
                .collect()
        })
        .collect();

    let mut cells = Vec::new();
    let mut outcomes = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        let mut n_success = 0usize;
        let mut n_failed = 0usize;
        let mut sum = vec![0.0f64; p];
        let mut sum_sq = vec![0.0f64; p];
        let mut covered = vec![0usize; p];
        let mut signif = vec![0usize; p];
        for rep in &fits {
            match &rep[mi] {
                Ok((beta1, ci)) => {
                    n_success += 1;
                    for j in 0..p {
                        let err = beta1[j] - truth[j];
                        sum[j] += beta1[j];
                        sum_sq[j] += err * err;
                        if ci[j].0 <= truth[j] && truth[j] <= ci[j].1 {
                            covered[j] += 1;
                        }
                        if ci[j].0 > 0.0 || ci[j].1 < 0.0 {
                            signif[j] += 1;
                        }
                    }
                }
                Err(_) => n_failed += 1,
            }
        }
        let denom = n_success as f64;
        for j in 0..p {
            let (bias, mse, coverage, signif_prop) = if n_success > 0 {
                (
                    Some(sum[j] / denom - truth[j]),
                    Some(sum_sq[j] / denom),
                    Some(covered[j] as f64 / denom),
                    Some(signif[j] as f64 / denom),
                )
            } else {
                (None, None, None, None)
            };
            cells.push(ReportCell {
                method,
                coefficient: j + 1,
                truth: truth[j],
                bias,
                mse,
                coverage,
                signif_prop,
            });
        }
        outcomes.push(MethodOutcome { method, n_failed, n_success });
    }

    Ok(SimulationReport {
        model: config.model,
        n: config.n,
        sigma: config.sigma,
        reps: config.reps,
        alpha: config.alpha,
        root_seed: config.root_seed,
        truth,
        cells,
        outcomes,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    Table1,
    Table2,
    S2P01,
    S2P09,
}

impl std::str::FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "table1" => Ok(PresetName::Table1),
            "table2" => Ok(PresetName::Table2),
            "s2_p01" => Ok(PresetName::S2P01),
            "s2_p09" => Ok(PresetName::S2P09),
            other => Err(Error::InvalidConfig(format!("unknown preset '{other}'"))),
        }
    }
}

impl PresetName {
    pub fn label(&self) -> &'static str {
        match self {
            PresetName::Table1 => "table1",
            PresetName::Table2 => "table2",
            PresetName::S2P01 => "s2_p01",
            PresetName::S2P09 => "s2_p09",
        }
    }
}

/// Noise grid shared by all presets.
pub const PRESET_SIGMAS: [f64; 4] = [0.0, 0.3, 1.0, 3.0];
/// Sample-size grid shared by all presets.
pub const PRESET_SAMPLE_SIZES: [usize; 3] = [1_000, 10_000, 200_000];
const PRESET_REPS: usize = 1_000;
const PRESET_ROOT_SEED: u64 = 0x7072_6976_6d61_736b; // fixed, documented
/// The conditional preset draws C once from this seed and freezes it across
/// the whole grid: C is a property of the true model, not of each dataset.
const PRESET_LOADINGS_SEED: u64 = PRESET_ROOT_SEED ^ 0xC0;

/// The generative design shared by the named presets: p = 3 covariates,
/// slope β₁ = (1, −1, 0)ᵀ imposed through μ₀ = μ₁ − Σβ₁, AR(1) correlation.
pub fn preset_spec(name: PresetName) -> MixtureSpec {
    let sigma = ar1_covariance(3, 0.5);
    let mu1 = ndarray::array![1.0, 1.0, 1.0];
    let beta1 = ndarray::array![1.0, -1.0, 0.0];
    let mu0 = &mu1 - &sigma.dot(&beta1);
    match name {
        PresetName::Table1 => MixtureSpec::unconditional(mu0, mu1, sigma, 0.5),
        PresetName::S2P01 => MixtureSpec::unconditional(mu0, mu1, sigma, 0.1),
        PresetName::S2P09 => MixtureSpec::unconditional(mu0, mu1, sigma, 0.9),
        PresetName::Table2 => {
            let mut rng = SeedSpec::new(PRESET_LOADINGS_SEED, 0).rng();
            let c = ndarray::Array2::from_shape_simple_fn((2, 3), || {
                rand::Rng::random_range(&mut rng, 1.0..2.0)
            });
            MixtureSpec::conditional(mu0, mu1, sigma, 0.0, ndarray::array![1.5, 1.0], c)
        }
    }
    .expect("preset parameters are valid")
}

/// Full σ×n grid of scenario configs for a named preset.
pub fn table_presets(name: PresetName) -> Vec<ScenarioConfig> {
    let spec = preset_spec(name);
    let model = if spec.is_conditional() {
        ModelKind::Conditional
    } else {
        ModelKind::Unconditional
    };
    let mut configs = Vec::new();
    for (si, &sigma) in PRESET_SIGMAS.iter().enumerate() {
        for (ni, &n) in PRESET_SAMPLE_SIZES.iter().enumerate() {
            configs.push(ScenarioConfig {
                model,
                spec: spec.clone(),
                n,
                sigma,
                reps: PRESET_REPS,
                alpha: 0.05,
                methods: vec![Method::NaiveMle, Method::NaiveLs, Method::CorrectedLs],
                // distinct seed per grid point keeps replicate streams disjoint
                root_seed: PRESET_ROOT_SEED
                    .wrapping_add((si * PRESET_SAMPLE_SIZES.len() + ni) as u64),
            });
        }
    }
    configs
}

/// One σ level of the masking-stability study.
#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub sigma: f64,
    pub coefficient: usize,
    /// cLS mean minus the raw-data LS estimate (the study's truth proxy).
    pub bias: Option<f64>,
    /// Standard deviation of the cLS estimate across re-maskings.
    pub se: Option<f64>,
    /// Fraction of CIs containing the raw-data estimate.
    pub contains_raw: Option<f64>,
    /// Fraction of CIs excluding zero.
    pub signif_prop: Option<f64>,
    pub n_failed: usize,
}

/// Re-mask a fixed raw dataset `reps` times per σ level, compute the
/// corrected LS each time, and report stability metrics against the raw-data
/// LS estimate treated as the truth.
pub fn significance_study(
    raw: &RawDataset,
    sigmas: &[f64],
    reps: usize,
    alpha: f64,
    root_seed: u64,
) -> Result<Vec<StabilityRow>> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    let p = raw.p();
    // raw-data LS baseline: masking with σ=0 leaves the estimator invariant
    let baseline = {
        let masked = crate::model::MaskedDataset::new(
            raw.y_star().to_owned(),
            raw.combined_covariates(),
            0.0,
            p,
            raw.q(),
        )?;
        naive_ls(&masked, alpha)?
    };
    let raw_beta1 = baseline.beta1_hat().to_owned();

    let mut rows = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        let fits: Vec<ReplicateFit> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let seed = SeedSpec::new(root_seed, (si * reps + r) as u64);
                let masked = apply_tm2_noise(raw, sigma, seed).expect("valid raw data");
                fit_method(Method::CorrectedLs, &masked, alpha)
            })
            .collect();
        let mut n_failed = 0usize;
        let mut est: Vec<Vec<f64>> = vec![Vec::new(); p];
        let mut contains = vec![0usize; p];
        let mut signif = vec![0usize; p];
        for fit in &fits {
            match fit {
                Ok((beta1, ci)) => {
                    for j in 0..p {
                        est[j].push(beta1[j]);
                        if ci[j].0 <= raw_beta1[j] && raw_beta1[j] <= ci[j].1 {
                            contains[j] += 1;
                        }
                        if ci[j].0 > 0.0 || ci[j].1 < 0.0 {
                            signif[j] += 1;
                        }
                    }
                }
                Err(_) => n_failed += 1,
            }
        }
        let n_success = reps - n_failed;
        for j in 0..p {
            let (bias, se, contains_raw, signif_prop) = if n_success > 0 {
                let m = est[j].iter().sum::<f64>() / n_success as f64;
                let var = est[j].iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / n_success as f64;
                (
                    Some(m - raw_beta1[j]),
                    Some(var.sqrt()),
                    Some(contains[j] as f64 / n_success as f64),
                    Some(signif[j] as f64 / n_success as f64),
                )
            } else {
                (None, None, None, None)
            };
            rows.push(StabilityRow {
                sigma,
                coefficient: j + 1,
                bias,
                se,
                contains_raw,
                signif_prop,
                n_failed,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_config(sigma: f64, reps: usize) -> ScenarioConfig {
        ScenarioConfig {
            model: ModelKind::Unconditional,
            spec: preset_spec(PresetName::Table1),
            n: 300,
            sigma,
            reps,
            alpha: 0.05,
            methods: vec![Method::NaiveMle, Method::NaiveLs, Method::CorrectedLs],
            root_seed: 7,
        }
    }

    #[test]
    fn zero_sigma_makes_ls_rows_identical() {
        let config = small_config(0.0, 1);
        let report = run_scenario(&config).unwrap();
        for j in 1..=3 {
            let ls = report.cell(Method::NaiveLs, j).unwrap();
            let cls = report.cell(Method::CorrectedLs, j).unwrap();
            assert_eq!(ls.bias, cls.bias);
            assert_eq!(ls.mse, cls.mse);
            assert_eq!(ls.coverage, cls.coverage);
        }
    }

    #[test]
    fn scenario_is_deterministic_across_pool_sizes() {
        let config = small_config(0.5, 24);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = single.install(|| run_scenario(&config).unwrap());
        let b = many.install(|| run_scenario(&config).unwrap());
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.outcomes, b.outcomes);
    }

    #[test]
    fn mse_dominates_squared_bias() {
        let report = run_scenario(&small_config(0.3, 40)).unwrap();
        for cell in &report.cells {
            let (Some(bias), Some(mse)) = (cell.bias, cell.mse) else {
                continue;
            };
            assert!(mse + 1e-12 >= bias * bias, "cell {:?}", cell);
        }
    }

    #[test]
    fn failure_counting_is_not_fatal() {
        // n barely above p+1 with huge noise: corrected LS fails often
        let config = ScenarioConfig {
            model: ModelKind::Unconditional,
            spec: preset_spec(PresetName::Table1),
            n: 8,
            sigma: 3.0,
            reps: 50,
            alpha: 0.05,
            methods: vec![Method::CorrectedLs],
            root_seed: 11,
        };
        let report = run_scenario(&config).unwrap();
        let outcome = report.outcome(Method::CorrectedLs).unwrap();
        assert_eq!(outcome.n_failed + outcome.n_success, 50);
        for cell in &report.cells {
            if outcome.n_success == 0 {
                assert!(cell.bias.is_none());
            } else {
                assert!(cell.bias.map(f64::is_finite).unwrap_or(true));
            }
        }
    }

    #[test]
    fn presets_have_expected_shape() {
        let grid = table_presets(PresetName::Table1);
        assert_eq!(grid.len(), 12);
        for config in &grid {
            config.validate().unwrap();
            assert_eq!(config.spec.p1(), Some(0.5));
            assert_eq!(config.spec.p(), 3);
            assert_eq!(config.spec.q(), 0);
        }
        let s2 = table_presets(PresetName::S2P01);
        assert!(s2.iter().all(|c| c.spec.p1() == Some(0.1)));
        let t2 = table_presets(PresetName::Table2);
        assert!(t2.iter().all(|c| c.spec.q() == 2));
        // C frozen across the grid and inside Uniform(1,2)
        let c0 = t2[0].spec.confounder_loadings().unwrap().to_owned();
        for config in &t2 {
            assert_eq!(config.spec.confounder_loadings().unwrap(), c0.view());
        }
        assert!(c0.iter().all(|&v| (1.0..2.0).contains(&v)));
        assert!("table1".parse::<PresetName>().is_ok());
        assert!("nope".parse::<PresetName>().is_err());
    }

    #[test]
    fn significance_study_zero_sigma_is_exact() {
        let spec = preset_spec(PresetName::Table1);
        let raw = sample_mixture(&spec, 400, SeedSpec::new(5, 0)).unwrap();
        let rows = significance_study(&raw, &[0.0], 10, 0.05, 99).unwrap();
        for row in &rows {
            // masking alone is estimator-invariant up to rounding
            assert!(row.bias.unwrap().abs() < 1e-8, "bias {:?}", row.bias);
            assert!(row.se.unwrap() < 1e-8, "se {:?}", row.se);
            assert_eq!(row.contains_raw, Some(1.0));
        }
    }

    #[test]
    fn significance_study_se_grows_with_sigma() {
        let spec = preset_spec(PresetName::Table1);
        let raw = sample_mixture(&spec, 2_000, SeedSpec::new(6, 0)).unwrap();
        let rows = significance_study(&raw, &[0.0, 0.5, 1.0], 30, 0.05, 17).unwrap();
        for j in 1..=3 {
            let ses: Vec<f64> = rows
                .iter()
                .filter(|r| r.coefficient == j)
                .map(|r| r.se.unwrap())
                .collect();
            assert!(ses[0] <= ses[1] + 1e-12 && ses[1] <= ses[2] + 1e-12, "{ses:?}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = small_config(0.5, 0);
        assert!(config.validate().is_err());
        config.reps = 5;
        config.n = 3;
        assert!(config.validate().is_err());
        config.n = 100;
        config.alpha = 1.2;
        assert!(config.validate().is_err());
        config.alpha = 0.05;
        config.model = ModelKind::Conditional;
        assert!(config.validate().is_err());
    }

    #[test]
    fn zero_sigma_reproduces_nominal_coverage() {
        // raw-data baseline: all three methods sit at the nominal 95% level
        let config = ScenarioConfig {
            n: 1_000,
            ..small_config(0.0, 300)
        };
        let report = run_scenario(&config).unwrap();
        for method in [Method::NaiveMle, Method::NaiveLs, Method::CorrectedLs] {
            for j in 1..=3 {
                let coverage = report.cell(method, j).unwrap().coverage.unwrap();
                assert!(
                    (0.90..=0.99).contains(&coverage),
                    "{} beta{j} coverage {coverage}",
                    method.label()
                );
            }
        }
    }

    #[test]
    fn truth_matches_designed_slope() {
        let report = run_scenario(&small_config(0.0, 1)).unwrap();
        let designed = array![1.0, -1.0, 0.0];
        for (a, b) in report.truth.iter().zip(designed.iter()) {
            assert!((a - b).abs() < 1e-12, "truth {a} vs designed {b}");
        }
    }
}
