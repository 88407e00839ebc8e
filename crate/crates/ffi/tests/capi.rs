//! Smoke tests through the C ABI: mask, estimate, read the results back, and
//! exercise the error paths. Also keeps the hand-maintained header honest.

use privmask_ffi::*;

/// Standard-normal-ish deterministic covariates without pulling in rand.
fn toy_data(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * 2);
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..n {
        let u1 = next().max(1e-12);
        let u2 = next();
        let g1 = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        let g2 = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).sin();
        let label = if next() < 0.5 { 1.0 } else { 0.0 };
        y.push(label);
        x.push(g1 + 1.5 * label);
        x.push(g2 - 0.5 * label);
    }
    (y, x)
}

#[test]
fn mask_and_estimate_through_the_c_abi() {
    let n = 400usize;
    let (y, x) = toy_data(n);
    let mut masked: *mut PmMasked = std::ptr::null_mut();
    let status = unsafe {
        pm_mask_tm2_noise(
            y.as_ptr(),
            x.as_ptr(),
            std::ptr::null(),
            n,
            2,
            0,
            0.5,
            42,
            0,
            &mut masked,
        )
    };
    assert_eq!(status, PmStatus::Ok);
    assert!(!masked.is_null());
    assert_eq!(unsafe { pm_masked_n(masked) }, n);
    assert_eq!(unsafe { pm_masked_p(masked) }, 2);
    assert_eq!(unsafe { pm_masked_q(masked) }, 0);
    assert_eq!(unsafe { pm_masked_sigma(masked) }, 0.5);

    let mut y_out = vec![0.0; n];
    let mut w_out = vec![0.0; n * 2];
    assert_eq!(unsafe { pm_masked_copy_y(masked, y_out.as_mut_ptr()) }, PmStatus::Ok);
    assert_eq!(unsafe { pm_masked_copy_w(masked, w_out.as_mut_ptr()) }, PmStatus::Ok);
    assert!(y_out.iter().any(|&v| v != 0.0 && v != 1.0));

    let mut est: *mut PmEstimate = std::ptr::null_mut();
    let status = unsafe { pm_estimate_corrected_ls(masked, 0.05, &mut est) };
    assert_eq!(status, PmStatus::Ok);
    assert_eq!(unsafe { pm_estimate_dim(est) }, 3);
    assert_eq!(unsafe { pm_estimate_num_slopes(est) }, 2);

    let mut theta = vec![0.0; 3];
    let mut beta1 = vec![0.0; 2];
    let mut phi = 0.0;
    let mut lo = vec![0.0; 2];
    let mut hi = vec![0.0; 2];
    assert_eq!(unsafe { pm_estimate_theta(est, theta.as_mut_ptr()) }, PmStatus::Ok);
    assert_eq!(unsafe { pm_estimate_beta1(est, beta1.as_mut_ptr()) }, PmStatus::Ok);
    assert_eq!(unsafe { pm_estimate_phi(est, &mut phi) }, PmStatus::Ok);
    assert_eq!(
        unsafe { pm_estimate_ci(est, lo.as_mut_ptr(), hi.as_mut_ptr()) },
        PmStatus::Ok
    );
    assert!(phi > 0.0);
    assert_eq!(theta[1], beta1[0]);
    for j in 0..2 {
        assert!(lo[j] <= beta1[j] && beta1[j] <= hi[j]);
    }

    // reconstruct a handle from the copied-out data and refit: same estimate
    let mut rebuilt: *mut PmMasked = std::ptr::null_mut();
    let status = unsafe {
        pm_masked_from_parts(y_out.as_ptr(), w_out.as_ptr(), n, 2, 0, 0.5, &mut rebuilt)
    };
    assert_eq!(status, PmStatus::Ok);
    let mut est2: *mut PmEstimate = std::ptr::null_mut();
    assert_eq!(
        unsafe { pm_estimate_corrected_ls(rebuilt, 0.05, &mut est2) },
        PmStatus::Ok
    );
    let mut theta2 = vec![0.0; 3];
    assert_eq!(unsafe { pm_estimate_theta(est2, theta2.as_mut_ptr()) }, PmStatus::Ok);
    assert_eq!(theta, theta2);

    unsafe {
        pm_estimate_free(est);
        pm_estimate_free(est2);
        pm_masked_free(masked);
        pm_masked_free(rebuilt);
    }
}

#[test]
fn error_paths_set_messages() {
    // null output pointer
    let status = unsafe {
        pm_mask_tm2_noise(
            std::ptr::null(),
            std::ptr::null(),
            std::ptr::null(),
            0,
            0,
            0,
            0.0,
            0,
            0,
            std::ptr::null_mut(),
        )
    };
    assert_eq!(status, PmStatus::NullArgument);
    let msg = unsafe { std::ffi::CStr::from_ptr(pm_last_error_message()) };
    assert!(!msg.to_bytes().is_empty());

    // invalid outcome values
    let y = [0.5; 10];
    let x = [0.0; 10];
    let mut masked: *mut PmMasked = std::ptr::null_mut();
    let status = unsafe {
        pm_mask_tm2_noise(y.as_ptr(), x.as_ptr(), std::ptr::null(), 10, 1, 0, 0.0, 0, 0, &mut masked)
    };
    assert_eq!(status, PmStatus::InvalidArgument);

    // estimation failure surfaces as its own status: constant outcome
    let y = [1.0; 12];
    let w: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let mut handle: *mut PmMasked = std::ptr::null_mut();
    let status =
        unsafe { pm_masked_from_parts(y.as_ptr(), w.as_ptr(), 12, 1, 0, 0.0, &mut handle) };
    assert_eq!(status, PmStatus::Ok);
    let mut est: *mut PmEstimate = std::ptr::null_mut();
    let status = unsafe { pm_estimate_naive_ls(handle, 0.05, &mut est) };
    assert_eq!(status, PmStatus::EstimationFailed);
    let msg = unsafe { std::ffi::CStr::from_ptr(pm_last_error_message()) };
    assert_eq!(msg.to_str().unwrap(), "zero residual variance");
    unsafe { pm_masked_free(handle) };

    // phi is unavailable for the MLE
    let n = 300usize;
    let (y, x) = toy_data(n);
    let mut masked: *mut PmMasked = std::ptr::null_mut();
    let status = unsafe {
        pm_mask_tm2_noise(y.as_ptr(), x.as_ptr(), std::ptr::null(), n, 2, 0, 0.2, 7, 0, &mut masked)
    };
    assert_eq!(status, PmStatus::Ok);
    let mut est: *mut PmEstimate = std::ptr::null_mut();
    assert_eq!(unsafe { pm_estimate_naive_mle(masked, 0.05, &mut est) }, PmStatus::Ok);
    let mut phi = 0.0;
    assert_eq!(unsafe { pm_estimate_phi(est, &mut phi) }, PmStatus::Unavailable);
    unsafe {
        pm_estimate_free(est);
        pm_masked_free(masked);
    }
}

#[test]
fn version_is_a_c_string() {
    let version = unsafe { std::ffi::CStr::from_ptr(pm_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_exported_symbol() {
    let header = include_str!("../include/privmask.h");
    let symbols = [
        "pm_version",
        "pm_last_error_message",
        "pm_mask_tm2_noise",
        "pm_masked_from_parts",
        "pm_masked_free",
        "pm_masked_n",
        "pm_masked_p",
        "pm_masked_q",
        "pm_masked_sigma",
        "pm_masked_copy_y",
        "pm_masked_copy_w",
        "pm_estimate_corrected_ls",
        "pm_estimate_naive_ls",
        "pm_estimate_naive_mle",
        "pm_estimate_free",
        "pm_estimate_dim",
        "pm_estimate_num_slopes",
        "pm_estimate_theta",
        "pm_estimate_phi",
        "pm_estimate_beta1",
        "pm_estimate_ci",
    ];
    for symbol in symbols {
        assert!(header.contains(symbol), "header missing {symbol}");
    }
    // and the source exports exactly that set
    let source = include_str!("../src/lib.rs");
    let exported = source.matches("#[no_mangle]").count();
    assert_eq!(exported, symbols.len(), "header list out of date");
}
