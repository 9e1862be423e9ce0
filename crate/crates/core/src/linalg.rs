//! Dense row-major Cholesky helpers for symmetric positive definite systems.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// In-place lower Cholesky factor of the `n x n` row-major matrix `a`; only the
/// lower triangle is read. On failure returns the offending pivot row.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), usize> {
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        let (head, tail) = a.split_at_mut(i * n);
        let row_i = &mut tail[..n];
        for j in 0..i {
            let row_j = &head[j * n..j * n + j + 1];
            let s = row_i[j] - dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / row_j[j];
        }
        let d = row_i[i] - dot(&row_i[..i], &row_i[..i]);
        if !(d > 0.0) || !d.is_finite() {
            return Err(i);
        }
        row_i[i] = d.sqrt();
        for v in row_i[i + 1..].iter_mut() {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` given the lower factor `l`.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        y[i] = (y[i] - dot(row, &y[..i])) / l[i * n + i];
    }
    // back substitution, column-oriented so rows stay contiguous
    for i in (0..n).rev() {
        y[i] /= l[i * n + i];
        let xi = y[i];
        let row = &l[i * n..i * n + i];
        for (yk, lk) in y[..i].iter_mut().zip(row) {
            *yk -= lk * xi;
        }
    }
    y
}

/// `sum(log(diag(L)))`, i.e. half the log-determinant.
pub(crate) fn half_log_det(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum()
}
