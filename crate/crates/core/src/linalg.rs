//! Small dense linear-algebra helpers shared by the GP, inference and policy code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Replace `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Cholesky factor of a symmetric positive-definite matrix, or a `Singular` error
/// carrying a rough condition estimate.
pub fn spd_cholesky(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular {
        context,
        condition: condition_estimate(m),
    })
}

/// Ratio of largest to smallest absolute eigenvalue; infinite when singular.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(symmetrized(m.clone())).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky with diagonal jitter escalation: the first attempt adds `1e-10·tr/n`,
/// each retry multiplies the jitter by ten, giving up beyond `1e-4·tr/n`.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, output: usize) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let scale = if n == 0 { 0.0 } else { k.trace().abs() / n as f64 };
    let mut jitter = 1e-10 * scale;
    let max_jitter = 1e-4 * scale * (1.0 + 1e-9);
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch, jitter));
        }
        if jitter >= max_jitter || jitter == 0.0 {
            return Err(Error::Cholesky { output, jitter });
        }
        jitter *= 10.0;
    }
}

pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrized(m.clone()))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Check positive semidefiniteness with tolerance `1e-10·tr(m)`.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let tolerance = 1e-10 * m.trace().abs();
    let min = min_eigenvalue(m);
    if !min.is_finite() || min < -tolerance {
        return Err(Error::NotPsd { min_eigenvalue: min, tolerance });
    }
    Ok(())
}

pub fn check_finite_matrix(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn check_finite_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Average the columns belonging to `(p, q)` and `(q, p)` of a Jacobian taken against a
/// column-major vectorized `d×d` symmetric matrix.
pub fn symmetrize_cov_columns(jac: &mut DMatrix<f64>, d: usize) {
    debug_assert_eq!(jac.ncols(), d * d);
    for p in 0..d {
        for q in (p + 1)..d {
            let a = p + q * d;
            let b = q + p * d;
            for r in 0..jac.nrows() {
                let v = 0.5 * (jac[(r, a)] + jac[(r, b)]);
                jac[(r, a)] = v;
                jac[(r, b)] = v;
            }
        }
    }
}

/// Row-wise counterpart of [`symmetrize_cov_columns`] for Jacobians whose rows
/// enumerate a symmetric output.
pub fn symmetrize_cov_rows(jac: &mut DMatrix<f64>, e: usize) {
    debug_assert_eq!(jac.nrows(), e * e);
    for a in 0..e {
        for b in (a + 1)..e {
            let r1 = a + b * e;
            let r2 = b + a * e;
            for c in 0..jac.ncols() {
                let v = 0.5 * (jac[(r1, c)] + jac[(r2, c)]);
                jac[(r1, c)] = v;
                jac[(r2, c)] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_rank_deficient_matrix() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let k = &v * v.transpose();
        let (ch, jitter) = cholesky_with_jitter(&k, 0).unwrap();
        assert!(jitter > 0.0);
        let rec = ch.l() * ch.l().transpose();
        assert!((rec - k).norm() < 1e-3);
    }

    #[test]
    fn jitter_gives_up_on_indefinite_matrix() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_with_jitter(&k, 3), Err(Error::Cholesky { output: 3, .. })));
    }

    #[test]
    fn psd_check_tolerates_roundoff_only() {
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-13]);
        assert!(check_psd(&ok).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_psd(&bad).is_err());
    }
}
