//! File formats and subcommand implementations behind the `privmask` binary.
//!
//! # Dataset files
//!
//! A dataset is a CSV file with header `y,x1..xp[,z1..zq]` and a companion
//! metadata JSON at `<path>.meta.json` carrying
//! `{"sigma", "n", "p", "q", "masked", "created_by"}`. σ travels in the
//! metadata because the analysis assumes the noise level is known to the
//! analyst; it is never inferred from the data. Floats are written with 17
//! significant digits (`{:.16e}`), which round-trips every finite f64
//! exactly.
//!
//! # Estimate files
//!
//! JSON with `method`, `alpha`, `theta_hat`, `phi_hat`, `beta1_hat`,
//! per-coefficient `{estimate, se, ci_lower, ci_upper}`, and a `diagnostics`
//! object `{converged, condition_warnings, failure}`. On estimation failure
//! the file still appears, with `failure` set and the numeric fields null.
//!
//! # Simulation reports
//!
//! `cmd_simulate` writes `<out>.csv` (one row per scenario × method ×
//! coefficient: `model,sigma,n,reps,alpha,root_seed,method,coefficient,
//! truth,bias,mse,coverage,signif_prop,n_failed,n_success`; undefined metrics
//! are written as `NA`) and `<out>.json` with the same content structured per
//! scenario. Wall-clock times go to stderr only, so reports are byte-stable.
//!
//! # Exit codes
//!
//! 0 success, 1 usage error, 2 input-contract violation, 3 estimation
//! failure.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimators::{corrected_ls, naive_cmle, naive_ls, CoefficientEstimate, Method};
use crate::linalg;
use crate::model::{MaskedDataset, MixtureSpec, RawDataset};
use crate::sampling::{apply_tm2_noise, sample_conditional_mixture, sample_mixture, SeedSpec};
use crate::simulation::{
    run_scenario, table_presets, ModelKind, PresetName, ScenarioConfig, SimulationReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONTRACT: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;

/// Environment variable that overrides `--seed` when set.
pub const SEED_ENV_VAR: &str = "PRIVMASK_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Contract(String),
    Estimation(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Contract(_) => EXIT_CONTRACT,
            CliError::Estimation(_) => EXIT_ESTIMATION,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Contract(msg) => write!(f, "input error: {msg}"),
            CliError::Estimation(err) => write!(f, "estimation failed: {err}"),
        }
    }
}

impl std::error::Error for CliError {}

fn io_err(context: &str, err: impl fmt::Display) -> CliError {
    CliError::Contract(format!("{context}: {err}"))
}

/// Format one f64 with 17 significant digits; parses back bit-exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMetadata {
    pub sigma: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub masked: bool,
    pub created_by: String,
}

fn created_by() -> String {
    format!("privmask {}", env!("CARGO_PKG_VERSION"))
}

pub fn metadata_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn dataset_header(p: usize, q: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(1 + p + q);
    cols.push("y".to_string());
    cols.extend((1..=p).map(|j| format!("x{j}")));
    cols.extend((1..=q).map(|j| format!("z{j}")));
    cols
}

fn write_dataset_csv(
    path: &Path,
    y: ndarray::ArrayView1<'_, f64>,
    w: ndarray::ArrayView2<'_, f64>,
    meta: &DatasetMetadata,
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| io_err(&format!("cannot write {}", path.display()), e))?;
    writer
        .write_record(dataset_header(meta.p, meta.q))
        .map_err(|e| io_err("csv write", e))?;
    for (i, row) in w.rows().into_iter().enumerate() {
        let mut record = Vec::with_capacity(1 + row.len());
        record.push(format_float(y[i]));
        record.extend(row.iter().map(|&v| format_float(v)));
        writer.write_record(&record).map_err(|e| io_err("csv write", e))?;
    }
    writer.flush().map_err(|e| io_err("csv flush", e))?;
    let meta_json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    fs::write(metadata_path(path), meta_json + "\n")
        .map_err(|e| io_err("metadata write", e))?;
    Ok(())
}

pub fn write_raw_dataset(path: &Path, raw: &RawDataset) -> Result<(), CliError> {
    let meta = DatasetMetadata {
        sigma: 0.0,
        n: raw.n(),
        p: raw.p(),
        q: raw.q(),
        masked: false,
        created_by: created_by(),
    };
    write_dataset_csv(path, raw.y_star(), raw.combined_covariates().view(), &meta)
}

pub fn write_masked_dataset(path: &Path, masked: &MaskedDataset) -> Result<(), CliError> {
    let meta = DatasetMetadata {
        sigma: masked.sigma(),
        n: masked.n(),
        p: masked.p(),
        q: masked.q(),
        masked: true,
        created_by: created_by(),
    };
    write_dataset_csv(path, masked.y(), masked.w(), &meta)
}

/// A dataset loaded from disk together with its metadata.
#[derive(Debug, Clone)]
pub enum LoadedDataset {
    Raw(RawDataset),
    Masked(MaskedDataset),
}

impl LoadedDataset {
    pub fn is_masked(&self) -> bool {
        matches!(self, LoadedDataset::Masked(_))
    }
}

pub fn read_dataset(path: &Path) -> Result<(DatasetMetadata, LoadedDataset), CliError> {
    let meta_raw = fs::read_to_string(metadata_path(path)).map_err(|e| {
        io_err(
            &format!("missing metadata {}", metadata_path(path).display()),
            e,
        )
    })?;
    let meta: DatasetMetadata = serde_json::from_str(&meta_raw)
        .map_err(|e| CliError::Contract(format!("invalid metadata JSON: {e}")))?;

    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| io_err(&format!("cannot read {}", path.display()), e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| io_err("csv header", e))?
        .iter()
        .map(str::to_string)
        .collect();
    let expect = dataset_header(meta.p, meta.q);
    if header != expect {
        return Err(CliError::Contract(format!(
            "header {header:?} does not match metadata (p={}, q={})",
            meta.p, meta.q
        )));
    }
    let width = 1 + meta.p + meta.q;
    let mut y = Vec::new();
    let mut w = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| io_err("csv row", e))?;
        if record.len() != width {
            return Err(CliError::Contract(format!(
                "row {} has {} fields, expected {width}",
                y.len() + 1,
                record.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| CliError::Contract(format!("bad float '{field}': {e}")))?;
            if j == 0 {
                y.push(v);
            } else {
                w.push(v);
            }
        }
    }
    if y.len() != meta.n {
        return Err(CliError::Contract(format!(
            "metadata says n={} but file has {} rows",
            meta.n,
            y.len()
        )));
    }
    let y = Array1::from_vec(y);
    let w = Array2::from_shape_vec((meta.n, meta.p + meta.q), w).expect("validated width");
    let loaded = if meta.masked {
        LoadedDataset::Masked(
            MaskedDataset::new(y, w, meta.sigma, meta.p, meta.q)
                .map_err(|e| CliError::Contract(e.to_string()))?,
        )
    } else {
        let x = w.slice(s![.., ..meta.p]).to_owned();
        let z = (meta.q > 0).then(|| w.slice(s![.., meta.p..]).to_owned());
        LoadedDataset::Raw(
            RawDataset::new(y, x, z).map_err(|e| CliError::Contract(e.to_string()))?,
        )
    };
    Ok((meta, loaded))
}

/// Mixture spec as authored in a JSON file: presence of `p1` versus
/// `gamma0`/`gamma1`/`c` selects the model family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecJson {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Contract(format!("{what} rows have uneven lengths")));
    }
    Array2::from_shape_vec((nrows, ncols), rows.concat())
        .map_err(|e| CliError::Contract(format!("{what}: {e}")))
}

impl SpecJson {
    pub fn to_spec(&self) -> Result<MixtureSpec, CliError> {
        let mu0 = Array1::from_vec(self.mu0.clone());
        let mu1 = Array1::from_vec(self.mu1.clone());
        let sigma = matrix_from_rows(&self.sigma, "sigma")?;
        let conditional_bits =
            self.gamma0.is_some() || self.gamma1.is_some() || self.c.is_some();
        match (self.p1, conditional_bits) {
            (Some(_), true) => Err(CliError::Contract(
                "spec must set either p1 or (gamma0, gamma1, c), not both".into(),
            )),
            (Some(p1), false) => MixtureSpec::unconditional(mu0, mu1, sigma, p1)
                .map_err(|e| CliError::Contract(e.to_string())),
            (None, true) => {
                let (Some(gamma0), Some(gamma1), Some(c)) =
                    (self.gamma0, self.gamma1.as_ref(), self.c.as_ref())
                else {
                    return Err(CliError::Contract(
                        "conditional spec needs gamma0, gamma1 and c".into(),
                    ));
                };
                MixtureSpec::conditional(
                    mu0,
                    mu1,
                    sigma,
                    gamma0,
                    Array1::from_vec(gamma1.clone()),
                    matrix_from_rows(c, "c")?,
                )
                .map_err(|e| CliError::Contract(e.to_string()))
            }
            (None, false) => Err(CliError::Contract(
                "spec must set p1 (unconditional) or gamma0/gamma1/c (conditional)".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct CoefficientJson {
    estimate: f64,
    se: f64,
    ci_lower: f64,
    ci_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
struct EstimateDiagnosticsJson {
    converged: bool,
    condition_warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct EstimateJson {
    method: String,
    alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta1_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coefficients: Option<Vec<CoefficientJson>>,
    diagnostics: EstimateDiagnosticsJson,
}

fn estimate_to_json(est: &CoefficientEstimate) -> EstimateJson {
    let z = crate::estimators::normal_quantile(1.0 - est.alpha / 2.0);
    let coefficients = est.ci.as_ref().map(|cis| {
        est.beta1_hat()
            .iter()
            .zip(cis.iter())
            .map(|(&point, &(lo, hi))| CoefficientJson {
                estimate: point,
                se: (hi - lo) / (2.0 * z),
                ci_lower: lo,
                ci_upper: hi,
            })
            .collect()
    });
    EstimateJson {
        method: est.method.label().to_string(),
        alpha: est.alpha,
        theta_hat: Some(est.theta_hat.to_vec()),
        phi_hat: est.phi_hat,
        beta1_hat: Some(est.beta1_hat().to_vec()),
        coefficients,
        diagnostics: EstimateDiagnosticsJson {
            converged: est.diagnostics.converged,
            condition_warnings: est.diagnostics.condition_warnings.clone(),
            failure: None,
        },
    }
}

fn failure_to_json(method: &str, alpha: f64, err: &Error) -> EstimateJson {
    EstimateJson {
        method: method.to_string(),
        alpha,
        theta_hat: None,
        phi_hat: None,
        beta1_hat: None,
        coefficients: None,
        diagnostics: EstimateDiagnosticsJson {
            converged: false,
            condition_warnings: Vec::new(),
            failure: Some(err.to_string()),
        },
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, body + "\n").map_err(|e| io_err("json write", e))
}

// ---------------------------------------------------------------------------
// command-line surface

#[derive(Debug, Parser)]
#[command(
    name = "privmask",
    about = "Mask tabular datasets with TM²+Noise and run corrected logistic inference",
    version
)]
pub struct CliArgs {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate a raw dataset from a mixture model preset or spec file.
    Gen(GenArgs),
    /// Mask a raw dataset: random orthogonal mix plus Gaussian noise.
    Mask(MaskArgs),
    /// Estimate logistic coefficients from a dataset file.
    Estimate(EstimateArgs),
    /// Run Monte Carlo scenario grids and write report files.
    Simulate(SimulateArgs),
    /// Re-check file/metadata consistency and moment preservation.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Model family: "mixture" (unconditional) or "conditional".
    #[arg(long)]
    pub model: String,
    /// Named preset: table1, table2, s2_p01, s2_p09.
    #[arg(long, conflicts_with = "spec_file")]
    pub preset: Option<String>,
    /// Mixture spec JSON file (alternative to --preset).
    #[arg(long)]
    pub spec_file: Option<PathBuf>,
    /// Number of rows to generate.
    #[arg(long)]
    pub n: usize,
    /// Root seed (PRIVMASK_SEED overrides).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Input raw dataset CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Noise standard deviation σ (≥ 0).
    #[arg(long)]
    pub sigma: f64,
    /// Root seed (PRIVMASK_SEED overrides).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Input dataset CSV (raw or masked).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Estimator: cmle, ls, or cls.
    #[arg(long)]
    pub method: String,
    /// Significance level for confidence intervals.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Output estimate JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario config: a JSON file path, `preset:<name>`, or
    /// `preset:table1-small` (reps=100, n=10³ slice of table1).
    #[arg(long)]
    pub config: String,
    /// Output stem: writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores). Reports are identical for any
    /// thread count.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Dataset CSV to verify against its metadata.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Optional raw counterpart; enables moment-preservation checks.
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

/// Resolve the effective seed: PRIVMASK_SEED overrides the flag when set.
fn effective_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|e| CliError::Usage(format!("{SEED_ENV_VAR}='{text}' is not a seed: {e}"))),
        Err(_) => Ok(flag),
    }
}

pub fn run(cli: CliArgs) -> Result<(), CliError> {
    match cli.command {
        CliCommand::Gen(args) => cmd_gen(args),
        CliCommand::Mask(args) => cmd_mask(args),
        CliCommand::Estimate(args) => cmd_estimate(args),
        CliCommand::Simulate(args) => cmd_simulate(args),
        CliCommand::Verify(args) => cmd_verify(args),
    }
}

fn parse_model(text: &str) -> Result<ModelKind, CliError> {
    match text {
        "mixture" | "unconditional" => Ok(ModelKind::Unconditional),
        "conditional" => Ok(ModelKind::Conditional),
        other => Err(CliError::Usage(format!(
            "unknown model '{other}' (expected mixture or conditional)"
        ))),
    }
}

pub fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let model = parse_model(&args.model)?;
    let spec = match (&args.preset, &args.spec_file) {
        (Some(name), None) => {
            let preset: PresetName = name
                .parse()
                .map_err(|e: Error| CliError::Usage(e.to_string()))?;
            crate::simulation::preset_spec(preset)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| io_err(&format!("cannot read {}", path.display()), e))?;
            let json: SpecJson = serde_json::from_str(&text)
                .map_err(|e| CliError::Contract(format!("invalid spec JSON: {e}")))?;
            json.to_spec()?
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --preset or --spec-file is required".into(),
            ))
        }
    };
    let conditional = spec.is_conditional();
    if conditional != matches!(model, ModelKind::Conditional) {
        return Err(CliError::Usage(format!(
            "--model {} does not match the {} spec",
            args.model,
            if conditional { "conditional" } else { "unconditional" }
        )));
    }
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let seed = SeedSpec::new(effective_seed(args.seed)?, 0);
    let raw = match model {
        ModelKind::Unconditional => sample_mixture(&spec, args.n, seed),
        ModelKind::Conditional => sample_conditional_mixture(&spec, args.n, seed),
    }
    .map_err(|e| CliError::Contract(e.to_string()))?;
    write_raw_dataset(&args.out, &raw)?;
    eprintln!(
        "wrote {} rows (p={}, q={}) to {}",
        raw.n(),
        raw.p(),
        raw.q(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_mask(args: MaskArgs) -> Result<(), CliError> {
    if args.sigma.is_nan() || args.sigma < 0.0 || !args.sigma.is_finite() {
        return Err(CliError::Contract(format!(
            "sigma must be ≥ 0, got {}",
            args.sigma
        )));
    }
    let (_, loaded) = read_dataset(&args.input)?;
    let raw = match loaded {
        LoadedDataset::Raw(raw) => raw,
        LoadedDataset::Masked(_) => {
            return Err(CliError::Contract(format!(
                "{} is already masked; refusing to re-mask",
                args.input.display()
            )))
        }
    };
    let seed = SeedSpec::new(effective_seed(args.seed)?, 0);
    let masked = apply_tm2_noise(&raw, args.sigma, seed)
        .map_err(|e| CliError::Contract(e.to_string()))?;
    write_masked_dataset(&args.out, &masked)?;
    eprintln!(
        "masked {} rows with sigma={} to {}",
        masked.n(),
        masked.sigma(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let method = match args.method.as_str() {
        "cmle" => Method::NaiveMle,
        "ls" => Method::NaiveLs,
        "cls" => Method::CorrectedLs,
        other => {
            return Err(CliError::Usage(format!(
                "unknown method '{other}' (expected cmle, ls, or cls)"
            )))
        }
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!(
            "--alpha must lie in (0,1), got {}",
            args.alpha
        )));
    }
    let (meta, loaded) = read_dataset(&args.input)?;
    let masked = match loaded {
        LoadedDataset::Masked(m) => m,
        LoadedDataset::Raw(raw) => MaskedDataset::new(
            raw.y_star().to_owned(),
            raw.combined_covariates(),
            0.0,
            raw.p(),
            raw.q(),
        )
        .map_err(|e| CliError::Contract(e.to_string()))?,
    };
    if method == Method::NaiveMle && meta.masked && meta.sigma > 0.0 {
        eprintln!(
            "caveat: the naive conditional MLE on masked data is known to be \
             biased with near-zero interval coverage; prefer cls"
        );
    }
    let fitted = match method {
        Method::NaiveMle => naive_cmle(&masked, args.alpha),
        Method::NaiveLs => naive_ls(&masked, args.alpha),
        Method::CorrectedLs => corrected_ls(&masked, args.alpha),
        Method::MixtureMle => unreachable!("not a CLI method"),
    };
    match fitted {
        Ok(est) => {
            write_json(&args.out, &estimate_to_json(&est))?;
            eprintln!("wrote estimate to {}", args.out.display());
            Ok(())
        }
        Err(err) => {
            let label = match method {
                Method::NaiveMle => "naive_mle",
                Method::NaiveLs => "naive_ls",
                Method::CorrectedLs => "corrected_ls",
                Method::MixtureMle => unreachable!(),
            };
            write_json(&args.out, &failure_to_json(label, args.alpha, &err))?;
            Err(CliError::Estimation(err))
        }
    }
}

// --- simulate -------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioJson {
    pub model: String,
    pub spec: SpecJson,
    pub n: usize,
    pub sigma: f64,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    pub root_seed: u64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_methods() -> Vec<String> {
    vec!["cmle".into(), "ls".into(), "cls".into()]
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulateConfigJson {
    pub scenarios: Vec<ScenarioJson>,
}

fn parse_method_name(name: &str) -> Result<Method, CliError> {
    match name {
        "cmle" | "naive_mle" => Ok(Method::NaiveMle),
        "ls" | "naive_ls" => Ok(Method::NaiveLs),
        "cls" | "corrected_ls" => Ok(Method::CorrectedLs),
        other => Err(CliError::Contract(format!("unknown method '{other}'"))),
    }
}

impl ScenarioJson {
    pub fn to_config(&self) -> Result<ScenarioConfig, CliError> {
        let model = parse_model(&self.model)?;
        let methods = self
            .methods
            .iter()
            .map(|m| parse_method_name(m))
            .collect::<Result<Vec<_>, _>>()?;
        let config = ScenarioConfig {
            model,
            spec: self.spec.to_spec()?,
            n: self.n,
            sigma: self.sigma,
            reps: self.reps,
            alpha: self.alpha,
            methods,
            root_seed: self.root_seed,
        };
        config.validate().map_err(|e| CliError::Contract(e.to_string()))?;
        Ok(config)
    }
}

fn resolve_simulate_configs(config: &str) -> Result<Vec<ScenarioConfig>, CliError> {
    if let Some(name) = config.strip_prefix("preset:") {
        if let Some(base) = name.strip_suffix("-small") {
            let preset: PresetName = base
                .parse()
                .map_err(|e: Error| CliError::Usage(e.to_string()))?;
            let mut grid = table_presets(preset);
            grid.retain(|c| c.n == 1_000);
            for c in &mut grid {
                c.reps = 100;
            }
            return Ok(grid);
        }
        let preset: PresetName = name
            .parse()
            .map_err(|e: Error| CliError::Usage(e.to_string()))?;
        return Ok(table_presets(preset));
    }
    let text = fs::read_to_string(config)
        .map_err(|e| io_err(&format!("cannot read config {config}"), e))?;
    let parsed: SimulateConfigJson = serde_json::from_str(&text)
        .map_err(|e| CliError::Contract(format!("invalid config JSON: {e}")))?;
    if parsed.scenarios.is_empty() {
        return Err(CliError::Contract("config has no scenarios".into()));
    }
    parsed.scenarios.iter().map(|s| s.to_config()).collect()
}

#[derive(Debug, Clone, Serialize)]
struct ReportCellJson {
    method: String,
    coefficient: usize,
    truth: f64,
    bias: Option<f64>,
    mse: Option<f64>,
    coverage: Option<f64>,
    signif_prop: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ReportScenarioJson {
    model: String,
    sigma: f64,
    n: usize,
    reps: usize,
    alpha: f64,
    root_seed: u64,
    truth: Vec<f64>,
    n_failed: std::collections::BTreeMap<String, usize>,
    cells: Vec<ReportCellJson>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Write the per-cell CSV for a batch of scenario reports.
pub fn write_report_csv(path: &Path, reports: &[SimulationReport]) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(
        "model,sigma,n,reps,alpha,root_seed,method,coefficient,truth,bias,mse,coverage,signif_prop,n_failed,n_success\n",
    );
    for report in reports {
        for cell in &report.cells {
            let outcome = report.outcome(cell.method).expect("method present");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},beta1_{},{},{},{},{},{},{},{}\n",
                report.model.label(),
                report.sigma,
                report.n,
                report.reps,
                report.alpha,
                report.root_seed,
                cell.method.label(),
                cell.coefficient,
                cell.truth,
                opt_cell(cell.bias),
                opt_cell(cell.mse),
                opt_cell(cell.coverage),
                opt_cell(cell.signif_prop),
                outcome.n_failed,
                outcome.n_success,
            ));
        }
    }
    fs::write(path, out).map_err(|e| io_err("report csv write", e))
}

pub fn write_report_json(path: &Path, reports: &[SimulationReport]) -> Result<(), CliError> {
    let body: Vec<ReportScenarioJson> = reports
        .iter()
        .map(|report| ReportScenarioJson {
            model: report.model.label().to_string(),
            sigma: report.sigma,
            n: report.n,
            reps: report.reps,
            alpha: report.alpha,
            root_seed: report.root_seed,
            truth: report.truth.to_vec(),
            n_failed: report
                .outcomes
                .iter()
                .map(|o| (o.method.label().to_string(), o.n_failed))
                .collect(),
            cells: report
                .cells
                .iter()
                .map(|c| ReportCellJson {
                    method: c.method.label().to_string(),
                    coefficient: c.coefficient,
                    truth: c.truth,
                    bias: c.bias,
                    mse: c.mse,
                    coverage: c.coverage,
                    signif_prop: c.signif_prop,
                })
                .collect(),
        })
        .collect();
    write_json(path, &body)
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let configs = resolve_simulate_configs(&args.config)?;
    let run_all = || -> Result<Vec<SimulationReport>, CliError> {
        let mut reports = Vec::with_capacity(configs.len());
        for (i, config) in configs.iter().enumerate() {
            let report =
                run_scenario(config).map_err(|e| CliError::Contract(e.to_string()))?;
            eprintln!(
                "[{}/{}] {} sigma={} n={} reps={} done in {:.1}s",
                i + 1,
                configs.len(),
                report.model.label(),
                report.sigma,
                report.n,
                report.reps,
                report.wall_time.as_secs_f64()
            );
            reports.push(report);
        }
        Ok(reports)
    };
    let reports = match args.threads {
        Some(threads) => {
            if threads == 0 {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            pool.install(run_all)?
        }
        None => run_all()?,
    };
    let csv_path = args.out.with_extension("csv");
    let json_path = args.out.with_extension("json");
    write_report_csv(&csv_path, &reports)?;
    write_report_json(&json_path, &reports)?;
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

// --- verify ----------------------------------------------------------------

pub fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let (meta, loaded) = read_dataset(&args.input)?;
    // read_dataset already enforced header/metadata/row-count consistency
    println!(
        "{}: n={} p={} q={} masked={} sigma={}",
        args.input.display(),
        meta.n,
        meta.p,
        meta.q,
        meta.masked,
        meta.sigma
    );
    if meta.masked && meta.sigma < 0.0 {
        return Err(CliError::Contract("masked file carries negative sigma".into()));
    }
    let Some(raw_path) = args.raw else {
        println!("metadata consistent");
        return Ok(());
    };
    let (_, raw_loaded) = read_dataset(&raw_path)?;
    let LoadedDataset::Raw(raw) = raw_loaded else {
        return Err(CliError::Contract(format!(
            "{} is not a raw dataset",
            raw_path.display()
        )));
    };
    let LoadedDataset::Masked(masked) = loaded else {
        return Err(CliError::Contract(format!(
            "{} is not a masked dataset",
            args.input.display()
        )));
    };
    if raw.n() != masked.n() || raw.p() != masked.p() || raw.q() != masked.q() {
        return Err(CliError::Contract(
            "raw and masked dimensions do not match".into(),
        ));
    }
    let wt_raw = linalg::augment_ones(raw.combined_covariates().view());
    let wt_masked = linalg::augment_ones(masked.w());
    let gram_raw = wt_raw.t().dot(&wt_raw);
    let mut gram_masked = wt_masked.t().dot(&wt_masked);
    // noise correction: E[W̃ᵀW̃] gains nσ² on the non-intercept diagonal
    let shift = masked.n() as f64 * masked.sigma() * masked.sigma();
    for j in 1..gram_masked.ncols() {
        gram_masked[(j, j)] -= shift;
    }
    let scale = linalg::max_abs(gram_raw.view());
    let defect = linalg::max_abs((&gram_masked - &gram_raw).view());
    let tol = if masked.sigma() == 0.0 {
        1e-8 * scale
    } else {
        // CLT-scale allowance for the noise cross terms
        let sig = masked.sigma();
        let n = masked.n() as f64;
        8.0 * sig * (n * (sig * sig + scale / n)).sqrt() + 1e-8 * scale
    };
    if defect > tol {
        return Err(CliError::Contract(format!(
            "moment preservation violated: defect {defect:.3e} exceeds {tol:.3e}"
        )));
    }
    println!("moment preservation ok (defect {defect:.3e} within {tol:.3e})");
    Ok(())
}

/// Entry point for the binary: parse, dispatch, and map errors to the exit
/// code contract.
pub fn main_with_exit_codes() -> i32 {
    let cli = match CliArgs::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap handles --help/--version as "errors" with successful exit
            if err.use_stderr() {
                let _ = write!(std::io::stderr(), "{err}");
                return EXIT_USAGE;
            }
            let _ = write!(std::io::stdout(), "{err}");
            return EXIT_OK;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("{err}");
            err.exit_code()
        }
    }
}
