//! Seeded random generation: mixture datasets, row-sum-preserving random
//! orthogonal matrices, and TM²+Noise masking.
//!
//! # Reproducibility
//!
//! All randomness flows through [`SeedSpec`]. The `root_seed` is expanded by
//! SplitMix64 into a 256-bit ChaCha8 key and `stream_index` selects the
//! ChaCha stream, so distinct `(root_seed, stream_index)` pairs map to
//! distinct generator states and parallel callers get independent streams.
//! Identical seeds give bit-identical datasets and masks within this
//! implementation; bit-compatibility across implementations is a non-goal.
//! Gaussian variates use the ziggurat sampler.
//!
//! # Masking without materializing the mask
//!
//! A row-sum-preserving orthogonal mask has the form M = H·blockdiag(1, Q)·Hᵀ
//! where H is the Householder reflection mapping e₁ to 1ₙ/√n and Q is drawn
//! Haar-uniformly on the orthogonal group O(n−1). Materializing M is O(n²)
//! memory and O(n³) time, which is hopeless at n = 2×10⁵, but the masked data
//! M·A can be sampled exactly without it: writing HᵀA = [r; B] (first row and
//! rest) and the thin QR factorization B = Q₁R, Haar invariance gives
//! Q·B ≐ P·R with P an independent uniformly distributed orthonormal frame.
//! Sampling P costs one QR of an (n−1)×(p+q+1) Gaussian matrix, so masking is
//! O(n·(p+q+1)²) end to end. [`random_row_sum_preserving_orthogonal`] still
//! builds the explicit matrix for moderate n, and the moment-preservation
//! tests check the two routes agree where it matters.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ClassWeights, MaskedDataset, MixtureSpec, RawDataset};

/// Root seed plus stream index identifying one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub root_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(root_seed: u64, stream_index: u64) -> Self {
        SeedSpec { root_seed, stream_index }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.root_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// An explicit n×n row-sum-preserving orthogonal mask.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMask {
    m: Array2<f64>,
}

impl OrthogonalMask {
    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    /// ‖MᵀM − Iₙ‖∞.
    pub fn orthogonality_defect(&self) -> f64 {
        let gram = self.m.t().dot(&self.m);
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - expect).abs());
            }
        }
        worst
    }

    /// ‖Mᵀ1ₙ − 1ₙ‖∞ (equals the row-sum defect ‖M1ₙ − 1ₙ‖∞ up to rounding).
    pub fn row_sum_defect(&self) -> f64 {
        let ones = Array1::<f64>::ones(self.n());
        let col = self.m.t().dot(&ones);
        col.iter().fold(0.0f64, |a, v| a.max((v - 1.0).abs()))
    }
}

/// Sample a Haar-distributed orthogonal matrix of side `m` by QR of a
/// standard Gaussian matrix with the R-diagonal sign correction.
fn haar_orthogonal(m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let g = gaussian_matrix(m, m, rng);
    let (q, _) = linalg::thin_qr(g.view(), true);
    q
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Householder application helpers for H = I − βhhᵀ with h = e₁ − 1ₙ/√n,
/// the reflection carrying e₁ to the normalized ones vector. H is symmetric.
struct OnesReflector {
    h: Array1<f64>,
    beta: f64,
}

impl OnesReflector {
    fn new(n: usize) -> Option<Self> {
        if n < 2 {
            return None;
        }
        let inv_sqrt = 1.0 / (n as f64).sqrt();
        let mut h = Array1::<f64>::from_elem(n, -inv_sqrt);
        h[0] += 1.0;
        let beta = 2.0 / h.dot(&h);
        Some(OnesReflector { h, beta })
    }

    /// In place B ← H·B.
    fn apply_left(&self, b: &mut Array2<f64>) {
        let ht_b = self.h.dot(b as &Array2<f64>);
        for (i, &hi) in self.h.iter().enumerate() {
            let f = self.beta * hi;
            if f == 0.0 {
                continue;
            }
            let mut row = b.row_mut(i);
            row.zip_mut_with(&ht_b, |v, &w| *v -= f * w);
        }
    }

    /// In place B ← B·H.
    fn apply_right(&self, b: &mut Array2<f64>) {
        let b_h = (b as &Array2<f64>).dot(&self.h);
        for (j, &hj) in self.h.iter().enumerate() {
            let f = self.beta * hj;
            if f == 0.0 {
                continue;
            }
            let mut col = b.column_mut(j);
            col.zip_mut_with(&b_h, |v, &w| *v -= f * w);
        }
    }
}

/// Draw a random orthogonal matrix M with MᵀM = Iₙ and Mᵀ1ₙ = 1ₙ,
/// Haar-uniform over that subgroup: M = H·blockdiag(1, Q)·Hᵀ with Q Haar on
/// O(n−1).
pub fn random_row_sum_preserving_orthogonal(n: usize, seed: SeedSpec) -> Result<OrthogonalMask> {
    if n == 0 {
        return Err(Error::InvalidConfig("mask size must be at least 1".into()));
    }
    if n == 1 {
        return Ok(OrthogonalMask { m: Array2::from_elem((1, 1), 1.0) });
    }
    let mut rng = seed.rng();
    let q = haar_orthogonal(n - 1, &mut rng);
    let mut m = Array2::<f64>::zeros((n, n));
    m[(0, 0)] = 1.0;
    m.slice_mut(s![1.., 1..]).assign(&q);
    let refl = OnesReflector::new(n).expect("n >= 2");
    refl.apply_left(&mut m);
    refl.apply_right(&mut m);
    Ok(OrthogonalMask { m })
}

/// How `apply_tm2_noise` chooses the mask. `Haar` is the production path;
/// `Identity` exists for tests and is not reachable from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Fresh Haar-distributed row-sum-preserving mask (applied implicitly).
    Haar,
    /// Force M = I so σ=0 gives bit-identical data; test hook.
    Identity,
}

/// Mask a raw dataset with the TM²+Noise scheme: W = M·(X*,Z*) + σU and
/// y = M·y* + σv, with U, v standard normal. Draws one fresh mask; the mask
/// itself is never exposed or stored.
pub fn apply_tm2_noise(raw: &RawDataset, sigma: f64, seed: SeedSpec) -> Result<MaskedDataset> {
    apply_tm2_noise_with_mode(raw, sigma, seed, MaskMode::Haar)
}

/// Test-visible variant of [`apply_tm2_noise`] with an explicit mask mode.
pub fn apply_tm2_noise_with_mode(
    raw: &RawDataset,
    sigma: f64,
    seed: SeedSpec,
    mode: MaskMode,
) -> Result<MaskedDataset> {
    if sigma.is_nan() || sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma must be ≥ 0, got {sigma}")));
    }
    let n = raw.n();
    let p = raw.p();
    let q = raw.q();
    let d = p + q;
    // stack [W*, y*] so one rotation treats covariates and outcome coherently
    let mut stacked = Array2::<f64>::zeros((n, d + 1));
    stacked.slice_mut(s![.., ..p]).assign(&raw.x_star());
    if let Some(z) = raw.z_star() {
        stacked.slice_mut(s![.., p..d]).assign(&z);
    }
    stacked.column_mut(d).assign(&raw.y_star());

    let mut rng = seed.rng();
    let rotated = match mode {
        MaskMode::Identity => stacked,
        MaskMode::Haar => rotate_implicit(stacked, &mut rng),
    };

    let mut w = rotated.slice(s![.., ..d]).to_owned();
    let mut y = rotated.column(d).to_owned();
    if sigma > 0.0 {
        for v in w.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += sigma * g;
        }
        for v in y.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += sigma * g;
        }
    }
    MaskedDataset::new(y, w, sigma, p, q)
}

/// Apply a fresh implicit Haar mask to the stacked data (see module docs).
fn rotate_implicit(stacked: Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = stacked.nrows();
    let k = stacked.ncols();
    if n == 1 {
        return stacked;
    }
    let refl = OnesReflector::new(n).expect("n >= 2");
    let mut b = stacked;
    refl.apply_left(&mut b); // HᵀA (H symmetric)
    let first = b.row(0).to_owned();
    let lower = b.slice(s![1.., ..]).to_owned();
    let (_, r) = linalg::thin_qr(lower.view(), false);
    let m = n - 1;
    let rank = m.min(k);
    let gauss = gaussian_matrix(m, rank, rng);
    let (frame, _) = linalg::thin_qr(gauss.view(), true);
    let rotated_lower = frame.dot(&r);
    let mut out = Array2::<f64>::zeros((n, k));
    out.row_mut(0).assign(&first);
    out.slice_mut(s![1.., ..]).assign(&rotated_lower);
    refl.apply_left(&mut out); // H·[r; P·R]
    out
}

/// Sample a raw dataset from an unconditional mixture spec: y*ᵢ ~ Bern(p₁),
/// X*ᵢ | y*ᵢ=j ~ N(μⱼ, Σ).
pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: SeedSpec) -> Result<RawDataset> {
    if spec.is_conditional() {
        return Err(Error::UseConditionalSampler);
    }
    if n == 0 {
        return Err(Error::InvalidConfig("need n ≥ 1".into()));
    }
    let p1 = spec.p1().expect("unconditional spec");
    let p = spec.p();
    let chol = linalg::cholesky(spec.sigma()).ok_or(Error::SigmaNotPositiveDefinite)?;
    let mut rng = seed.rng();
    let mut y = Array1::<f64>::zeros(n);
    let mut x = Array2::<f64>::zeros((n, p));
    let mut g = Array1::<f64>::zeros(p);
    for i in 0..n {
        let label = draw_label(p1, &mut rng);
        y[i] = label;
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mu = if label == 1.0 { spec.mu1() } else { spec.mu0() };
        let mut row = x.row_mut(i);
        // xᵢ = μ + gᵀLᵀ keeps the row convention: Cov(xᵢ) = LLᵀ = Σ
        for j in 0..p {
            let mut v = mu[j];
            for t in 0..=j {
                v += chol[(j, t)] * g[t];
            }
            row[j] = v;
        }
    }
    RawDataset::new(y, x, None)
}

/// Sample a raw dataset from a conditional mixture spec: Z*ᵢ ~ U[−1,1]^q,
/// y*ᵢ | Z*ᵢ ~ Bern(p₁(Z*ᵢ)), X*ᵢ | (y*ᵢ=j, Z*ᵢ) ~ N(μⱼ + Z*ᵢC, Σ).
pub fn sample_conditional_mixture(
    spec: &MixtureSpec,
    n: usize,
    seed: SeedSpec,
) -> Result<RawDataset> {
    let c = spec.confounder_loadings().ok_or(Error::ConditionalSpecRequired)?;
    let ClassWeights::Logistic { .. } = spec.weights() else {
        return Err(Error::ConditionalSpecRequired);
    };
    if n == 0 {
        return Err(Error::InvalidConfig("need n ≥ 1".into()));
    }
    let p = spec.p();
    let q = spec.q();
    let chol = linalg::cholesky(spec.sigma()).ok_or(Error::SigmaNotPositiveDefinite)?;
    let mut rng = seed.rng();
    let mut y = Array1::<f64>::zeros(n);
    let mut x = Array2::<f64>::zeros((n, p));
    let mut z = Array2::<f64>::zeros((n, q));
    let mut g = Array1::<f64>::zeros(p);
    for i in 0..n {
        let mut zrow = z.row_mut(i);
        for v in zrow.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let w1 = spec.class1_weight(zrow.view());
        let label = draw_label(w1, &mut rng);
        y[i] = label;
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let shift = zrow.dot(&c);
        let mu = if label == 1.0 { spec.mu1() } else { spec.mu0() };
        let mut row = x.row_mut(i);
        for j in 0..p {
            let mut v = mu[j] + shift[j];
            for t in 0..=j {
                v += chol[(j, t)] * g[t];
            }
            row[j] = v;
        }
    }
    RawDataset::new(y, x, Some(z))
}

fn draw_label(p1: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<f64>() < p1 {
        1.0
    } else {
        0.0
    }
}
