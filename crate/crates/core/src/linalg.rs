//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for r in 0..n {
        for c in (r + 1)..n {
            worst = worst.max((m[(r, c)] - m[(c, r)]).abs());
        }
    }
    worst
}

/// Cholesky factor of a symmetric matrix, `None` when not positive definite.
pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(m.clone())?;
    // nalgebra accepts tiny positive pivots that leave the factor useless.
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite()) {
        return None;
    }
    Some(chol)
}

pub(crate) fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = cholesky(m)?;
    let log_det = log_det_from_cholesky(&chol);
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Some((inv, log_det))
}

/// `d' A d` for a dense square `A`.
pub(crate) fn quadratic_form(diff: &[f64], a: &DMatrix<f64>) -> f64 {
    let n = diff.len();
    debug_assert_eq!(a.nrows(), n);
    let mut total = 0.0;
    for c in 0..n {
        let col = a.column(c);
        let mut inner = 0.0;
        for r in 0..n {
            inner += diff[r] * col[r];
        }
        total += inner * diff[c];
    }
    total
}

/// Solve `A x = b` for symmetric positive definite `A`.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    cholesky(a).map(|chol| chol.solve(b))
}
