//! Small dense symmetric positive-definite solves for the per-query
//! normal equations and Newton systems (dimension `d + 1`, usually < 10).

/// Solves `A x = b` in place by Cholesky factorisation of the row-major
/// `n×n` matrix `a`. Returns `None` when a pivot falls to or below
/// `rel_floor · max_i A_ii`, i.e. the system is numerically rank deficient.
pub(crate) fn cholesky_solve(a: &mut [f64], n: usize, b: &mut [f64], rel_floor: f64) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    let floor = rel_floor * max_diag;
    for j in 0..n {
        let mut pivot = a[j * n + j];
        for k in 0..j {
            pivot -= a[j * n + k] * a[j * n + k];
        }
        if !(pivot > floor) {
            return None;
        }
        let l = pivot.sqrt();
        a[j * n + j] = l;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(())
}
