//! C ABI for the privmask masking and estimation routines.
//!
//! The surface mirrors `include/privmask.h` (kept in cbindgen style, one
//! declaration per exported symbol): opaque handles `PmMasked`/`PmEstimate`,
//! integer status codes, and a thread-local last-error message. Matrices
//! cross the boundary as row-major `double` buffers with explicit
//! dimensions. Every function is safe to call from any thread; handles must
//! not be shared across threads while being freed.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::{Array1, Array2};
use privmask::estimators::{corrected_ls, naive_cmle, naive_ls, CoefficientEstimate};
use privmask::model::{MaskedDataset, RawDataset};
use privmask::sampling::{apply_tm2_noise, SeedSpec};

/// Status codes shared with the header.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    EstimationFailed = 3,
    Unavailable = 4,
    Panic = 5,
}

/// Opaque masked-dataset handle.
pub struct PmMasked(MaskedDataset);

/// Opaque estimate handle.
pub struct PmEstimate(CoefficientEstimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let text = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(status: PmStatus, msg: impl Into<Vec<u8>>) -> PmStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PmStatus) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(PmStatus::Panic, "internal panic"),
    }
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Mask raw data with the TM²+Noise scheme and return a masked-dataset
/// handle.
///
/// `y` has length `n` with entries in {0, 1}; `x` is row-major n×p;
/// `z` is row-major n×q or NULL when `q` is 0. `seed`/`stream` select the
/// reproducible random stream.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_mask_tm2_noise(
    y: *const f64,
    x: *const f64,
    z: *const f64,
    n: usize,
    p: usize,
    q: usize,
    sigma: f64,
    seed: u64,
    stream: u64,
    out: *mut *mut PmMasked,
) -> PmStatus {
    guard(|| {
        if out.is_null() || y.is_null() || x.is_null() || (q > 0 && z.is_null()) {
            return fail(PmStatus::NullArgument, "null pointer argument");
        }
        let y = Array1::from_vec(unsafe { std::slice::from_raw_parts(y, n) }.to_vec());
        let x_vec = unsafe { std::slice::from_raw_parts(x, n * p) }.to_vec();
        let Ok(x) = Array2::from_shape_vec((n, p), x_vec) else {
            return fail(PmStatus::InvalidArgument, "x dimensions do not match n*p");
        };
        let z = if q > 0 {
            let z_vec = unsafe { std::slice::from_raw_parts(z, n * q) }.to_vec();
            match Array2::from_shape_vec((n, q), z_vec) {
                Ok(z) => Some(z),
                Err(_) => {
                    return fail(PmStatus::InvalidArgument, "z dimensions do not match n*q")
                }
            }
        } else {
            None
        };
        let raw = match RawDataset::new(y, x, z) {
            Ok(raw) => raw,
            Err(err) => return fail(PmStatus::InvalidArgument, err.to_string()),
        };
        match apply_tm2_noise(&raw, sigma, SeedSpec::new(seed, stream)) {
            Ok(masked) => {
                clear_error();
                unsafe { *out = Box::into_raw(Box::new(PmMasked(masked))) };
                PmStatus::Ok
            }
            Err(err) => fail(PmStatus::InvalidArgument, err.to_string()),
        }
    })
}

/// Wrap already-masked data (for example read from a release file) in a
/// handle: `w` is row-major n×(p+q) and `sigma` is the known noise level.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_from_parts(
    y: *const f64,
    w: *const f64,
    n: usize,
    p: usize,
    q: usize,
    sigma: f64,
    out: *mut *mut PmMasked,
) -> PmStatus {
    guard(|| {
        if out.is_null() || y.is_null() || w.is_null() {
            return fail(PmStatus::NullArgument, "null pointer argument");
        }
        let y = Array1::from_vec(unsafe { std::slice::from_raw_parts(y, n) }.to_vec());
        let w_vec = unsafe { std::slice::from_raw_parts(w, n * (p + q)) }.to_vec();
        let Ok(w) = Array2::from_shape_vec((n, p + q), w_vec) else {
            return fail(PmStatus::InvalidArgument, "w dimensions do not match n*(p+q)");
        };
        match MaskedDataset::new(y, w, sigma, p, q) {
            Ok(masked) => {
                clear_error();
                unsafe { *out = Box::into_raw(Box::new(PmMasked(masked))) };
                PmStatus::Ok
            }
            Err(err) => fail(PmStatus::InvalidArgument, err.to_string()),
        }
    })
}

/// # Safety
/// `handle` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_free(handle: *mut PmMasked) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// # Safety
/// `handle` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_n(handle: *const PmMasked) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.0.n())
}

/// # Safety
/// `handle` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_p(handle: *const PmMasked) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.0.p())
}

/// # Safety
/// `handle` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_q(handle: *const PmMasked) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.0.q())
}

/// # Safety
/// `handle` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_sigma(handle: *const PmMasked) -> f64 {
    unsafe { handle.as_ref() }.map_or(f64::NAN, |h| h.0.sigma())
}

/// Copy the masked outcome vector into `dst` (length n).
///
/// # Safety
/// `dst` must be valid for `pm_masked_n(handle)` doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_copy_y(handle: *const PmMasked, dst: *mut f64) -> PmStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail(PmStatus::NullArgument, "null handle");
    };
    if dst.is_null() {
        return fail(PmStatus::NullArgument, "null destination");
    }
    let out = unsafe { std::slice::from_raw_parts_mut(dst, h.0.n()) };
    for (slot, &v) in out.iter_mut().zip(h.0.y().iter()) {
        *slot = v;
    }
    PmStatus::Ok
}

/// Copy the masked covariate matrix row-major into `dst` (length n*(p+q)).
///
/// # Safety
/// `dst` must be valid for `n*(p+q)` doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_masked_copy_w(handle: *const PmMasked, dst: *mut f64) -> PmStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail(PmStatus::NullArgument, "null handle");
    };
    if dst.is_null() {
        return fail(PmStatus::NullArgument, "null destination");
    }
    let w = h.0.w();
    let out = unsafe { std::slice::from_raw_parts_mut(dst, w.len()) };
    for (slot, &v) in out.iter_mut().zip(w.iter()) {
        *slot = v;
    }
    PmStatus::Ok
}

fn estimate_with(
    handle: *const PmMasked,
    alpha: f64,
    out: *mut *mut PmEstimate,
    fit: impl Fn(&MaskedDataset, f64) -> privmask::Result<CoefficientEstimate>,
) -> PmStatus {
    guard(|| {
        let Some(h) = (unsafe { handle.as_ref() }) else {
            return fail(PmStatus::NullArgument, "null handle");
        };
        if out.is_null() {
            return fail(PmStatus::NullArgument, "null output pointer");
        }
        match fit(&h.0, alpha) {
            Ok(est) => {
                clear_error();
                unsafe { *out = Box::into_raw(Box::new(PmEstimate(est))) };
                PmStatus::Ok
            }
            Err(err) => {
                let status = if err.is_estimation_failure() {
                    PmStatus::EstimationFailed
                } else {
                    PmStatus::InvalidArgument
                };
                fail(status, err.to_string())
            }
        }
    })
}

/// Corrected least squares on the handle's data at its recorded σ.
///
/// # Safety
/// `handle` must be a live handle from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_corrected_ls(
    handle: *const PmMasked,
    alpha: f64,
    out: *mut *mut PmEstimate,
) -> PmStatus {
    estimate_with(handle, alpha, out, corrected_ls)
}

/// Naive least squares (noise ignored).
///
/// # Safety
/// As for [`pm_estimate_corrected_ls`].
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_naive_ls(
    handle: *const PmMasked,
    alpha: f64,
    out: *mut *mut PmEstimate,
) -> PmStatus {
    estimate_with(handle, alpha, out, naive_ls)
}

/// Naive conditional MLE (Newton on the logistic score).
///
/// # Safety
/// As for [`pm_estimate_corrected_ls`].
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_naive_mle(
    handle: *const PmMasked,
    alpha: f64,
    out: *mut *mut PmEstimate,
) -> PmStatus {
    estimate_with(handle, alpha, out, naive_cmle)
}

/// # Safety
/// `handle` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_free(handle: *mut PmEstimate) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Length of θ̂ (= p + q + 1).
///
/// # Safety
/// `handle` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_dim(handle: *const PmEstimate) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.0.theta_hat.len())
}

/// Number of β₁ components (= p).
///
/// # Safety
/// `handle` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_num_slopes(handle: *const PmEstimate) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.0.p)
}

/// Copy θ̂ into `dst` (length `pm_estimate_dim`).
///
/// # Safety
/// `dst` must be valid for `pm_estimate_dim(handle)` doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_theta(handle: *const PmEstimate, dst: *mut f64) -> PmStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail(PmStatus::NullArgument, "null handle");
    };
    if dst.is_null() {
        return fail(PmStatus::NullArgument, "null destination");
    }
    let out = unsafe { std::slice::from_raw_parts_mut(dst, h.0.theta_hat.len()) };
    for (slot, &v) in out.iter_mut().zip(h.0.theta_hat.iter()) {
        *slot = v;
    }
    PmStatus::Ok
}

/// Fetch φ̂; `Unavailable` for methods without a precision parameter.
///
/// # Safety
/// `out` must be a valid pointer to one double.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_phi(handle: *const PmEstimate, out: *mut f64) -> PmStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail(PmStatus::NullArgument, "null handle");
    };
    if out.is_null() {
        return fail(PmStatus::NullArgument, "null output pointer");
    }
    match h.0.phi_hat {
        Some(phi) => {
            unsafe { *out = phi };
            PmStatus::Ok
        }
        None => fail(PmStatus::Unavailable, "method has no phi parameter"),
    }
}

/// Copy β̂₁ into `dst` (length `pm_estimate_num_slopes`).
///
/// # Safety
/// `dst` must be valid for `pm_estimate_num_slopes(handle)` doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_beta1(handle: *const PmEstimate, dst: *mut f64) -> PmStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail(PmStatus::NullArgument, "null handle");
    };
    if dst.is_null() {
        return fail(PmStatus::NullArgument, "null destination");
    }
    let beta1 = h.0.beta1_hat();
    let out = unsafe { std::slice::from_raw_parts_mut(dst, beta1.len()) };
    for (slot, &v) in out.iter_mut().zip(beta1.iter()) {
        *slot = v;
    }
    PmStatus::Ok
}

/// Copy the per-slope confidence bounds into `lo`/`hi`
/// (each length `pm_estimate_num_slopes`).
///
/// # Safety
/// `lo` and `hi` must each be valid for `pm_estimate_num_slopes` doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_estimate_ci(
    handle: *const PmEstimate,
    lo: *mut f64,
    hi: *mut f64,
) -> PmStatus {
    let Some(h) = (unsafe { handle.as_ref() }) else {
        return fail(PmStatus::NullArgument, "null handle");
    };
    if lo.is_null() || hi.is_null() {
        return fail(PmStatus::NullArgument, "null destination");
    }
    let Some(ci) = h.0.ci.as_ref() else {
        return fail(PmStatus::Unavailable, "estimate has no intervals");
    };
    let lo = unsafe { std::slice::from_raw_parts_mut(lo, ci.len()) };
    let hi = unsafe { std::slice::from_raw_parts_mut(hi, ci.len()) };
    for (j, &(l, u)) in ci.iter().enumerate() {
        lo[j] = l;
        hi[j] = u;
    }
    PmStatus::Ok
}
