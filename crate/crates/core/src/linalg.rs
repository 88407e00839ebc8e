//! Small dense linear algebra used by the estimators and samplers.
//!
//! Everything here operates on matrices whose side is the coefficient
//! dimension (p+q+1, typically ≤ 10) or, for the QR routines, tall-and-thin
//! data matrices. Symmetric positive definite solves go through Cholesky
//! factorization — explicit inverses are never formed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Returns `None` when a pivot is not strictly positive, i.e. the matrix is
/// not numerically positive definite. Only the lower triangle of `a` is read.
pub fn cholesky(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solve L z = b for lower-triangular L.
pub fn solve_lower(l: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let zk = z[k];
            z[i] -= l[(i, k)] * zk;
        }
        z[i] /= l[(i, i)];
    }
    z
}

/// Solve Lᵀ x = z for lower-triangular L.
pub fn solve_lower_transpose(l: ArrayView2<'_, f64>, z: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = z.to_owned();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let xk = x[k];
            x[i] -= l[(k, i)] * xk;
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Solve A x = b given the Cholesky factor L of A.
pub fn chol_solve(l: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    solve_lower_transpose(l, solve_lower(l, b).view())
}

/// Solve A X = B column by column given the Cholesky factor L of A.
pub fn chol_solve_mat(l: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut x = Array2::<f64>::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        x.column_mut(j).assign(&chol_solve(l, col));
    }
    x
}

/// Condition-number estimate from the Cholesky factor: (max lᵢᵢ / min lᵢᵢ)².
pub fn chol_condition_estimate(l: ArrayView2<'_, f64>) -> f64 {
    let diag = l.diag();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &d in diag.iter() {
        lo = lo.min(d.abs());
        hi = hi.max(d.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

/// Solve A X = B by LU with partial pivoting; A is a general square matrix.
///
/// Used for the sandwich bread matrix, which need not be definite at finite
/// sample sizes. Fails on numerically singular input.
pub fn lu_solve_mat(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "LU solve: A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let mut lu = a.to_owned();
    let mut x = b.to_owned();
    let mut max_abs = 0.0f64;
    for v in lu.iter() {
        max_abs = max_abs.max(v.abs());
    }
    let tiny = max_abs * (n as f64) * f64::EPSILON;
    for col in 0..n {
        // partial pivot
        let mut piv = col;
        let mut best = lu[(col, col)].abs();
        for r in (col + 1)..n {
            let v = lu[(r, col)].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best.is_nan() || best <= tiny || !best.is_finite() {
            return Err(Error::NonInvertibleJacobian);
        }
        if piv != col {
            for j in 0..n {
                lu.swap((col, j), (piv, j));
            }
            for j in 0..x.ncols() {
                x.swap((col, j), (piv, j));
            }
        }
        let d = lu[(col, col)];
        for r in (col + 1)..n {
            let f = lu[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            lu[(r, col)] = f;
            for j in (col + 1)..n {
                let v = lu[(col, j)];
                lu[(r, j)] -= f * v;
            }
            for j in 0..x.ncols() {
                let v = x[(col, j)];
                x[(r, j)] -= f * v;
            }
        }
    }
    // back substitution
    for j in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, j)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

/// Thin Householder QR of an m×k matrix: A = Q·R with Q m×r, R r×k,
/// r = min(m, k), and Q having orthonormal columns.
///
/// When `positive_diag` is set, the factorization is normalized so that the
/// diagonal of R is nonnegative; applied to a standard Gaussian matrix this
/// makes Q exactly Haar-distributed on the Stiefel manifold.
pub fn thin_qr(a: ArrayView2<'_, f64>, positive_diag: bool) -> (Array2<f64>, Array2<f64>) {
    let m = a.nrows();
    let k = a.ncols();
    let r = m.min(k);
    let mut work = a.to_owned();
    // Householder vectors overwrite the subdiagonal; diag pivots kept aside.
    let mut betas = vec![0.0f64; r];
    let mut diag = vec![0.0f64; r];
    for j in 0..r {
        let mut norm2 = 0.0;
        for i in j..m {
            norm2 += work[(i, j)] * work[(i, j)];
        }
        let norm = norm2.sqrt();
        let a0 = work[(j, j)];
        if norm == 0.0 {
            betas[j] = 0.0;
            diag[j] = 0.0;
            continue;
        }
        let alpha = if a0 >= 0.0 { -norm } else { norm };
        let v0 = a0 - alpha;
        let vnorm2 = norm2 - a0 * a0 + v0 * v0;
        if vnorm2 == 0.0 {
            betas[j] = 0.0;
            diag[j] = alpha;
            continue;
        }
        betas[j] = 2.0 / vnorm2;
        work[(j, j)] = v0;
        diag[j] = alpha;
        // apply reflector to remaining columns
        for c in (j + 1)..k {
            let mut dot = 0.0;
            for i in j..m {
                dot += work[(i, j)] * work[(i, c)];
            }
            let f = betas[j] * dot;
            for i in j..m {
                let v = work[(i, j)];
                work[(i, c)] -= f * v;
            }
        }
    }
    // extract R (r×k)
    let mut rmat = Array2::<f64>::zeros((r, k));
    for i in 0..r {
        rmat[(i, i)] = diag[i];
        for j in (i + 1)..k {
            rmat[(i, j)] = work[(i, j)];
        }
    }
    // accumulate Q = H_0 · … · H_{r−1} applied to the first r identity columns
    let mut q = Array2::<f64>::zeros((m, r));
    for j in 0..r {
        q[(j, j)] = 1.0;
    }
    for j in (0..r).rev() {
        if betas[j] == 0.0 {
            continue;
        }
        for c in 0..r {
            let mut dot = 0.0;
            for i in j..m {
                dot += work[(i, j)] * q[(i, c)];
            }
            let f = betas[j] * dot;
            for i in j..m {
                let v = work[(i, j)];
                q[(i, c)] -= f * v;
            }
        }
    }
    if positive_diag {
        for j in 0..r {
            // sign(0) counts as +1 so degenerate columns pass through
            if rmat[(j, j)] < 0.0 {
                for i in 0..m {
                    q[(i, j)] = -q[(i, j)];
                }
                for c in j..k {
                    rmat[(j, c)] = -rmat[(j, c)];
                }
            }
        }
    }
    (q, rmat)
}

/// Max absolute entry of a matrix.
pub fn max_abs(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Prepend a column of ones: W̃ = (1, W).
pub fn augment_ones(w: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = w.nrows();
    let k = w.ncols();
    let mut out = Array2::<f64>::ones((n, k + 1));
    out.slice_mut(ndarray::s![.., 1..]).assign(&w);
    out
}
