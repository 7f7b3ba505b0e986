//! Gaussian beliefs and closed-form moments of sines and cosines of Gaussian variables.
//!
//! For `x ~ N(mu, var)` the characteristic function gives
//! `E[sin(kx)] = exp(-k²var/2)·sin(k·mu)` and `E[cos(kx)] = exp(-k²var/2)·cos(k·mu)`.
//! Products of trig functions of jointly Gaussian variables reduce to these through
//! product-to-sum identities, since any linear combination of the variables is again Gaussian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Mean and full covariance of a (state, state-control, ...) distribution.
///
/// The covariance is symmetrized on construction and must be positive semidefinite
/// up to `1e-10·trace`; violations are reported, never projected away.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::dim(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        linalg::check_finite_vector(&mean, "belief mean")?;
        linalg::check_finite_matrix(&cov, "belief covariance")?;
        let cov = linalg::symmetrized(cov);
        linalg::check_psd(&cov)?;
        Ok(GaussianBelief { mean, cov })
    }

    /// Point mass at `mean`.
    pub fn deterministic(mean: DVector<f64>) -> Self {
        let d = mean.len();
        GaussianBelief { mean, cov: DMatrix::zeros(d, d) }
    }

    pub fn diagonal(mean: DVector<f64>, variances: &[f64]) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

fn check_var(var: f64) -> Result<()> {
    if var.is_nan() || var < 0.0 {
        Err(Error::Domain(format!("variance must be nonnegative, got {var}")))
    } else {
        Ok(())
    }
}

/// `(E[sin(kx)], E[cos(kx)])` for `x ~ N(mu, var)`.
pub fn trig_moments(mu: f64, var: f64, k: u32) -> Result<(f64, f64)> {
    check_var(var)?;
    let k = k as f64;
    let damp = (-0.5 * k * k * var).exp();
    Ok((damp * (k * mu).sin(), damp * (k * mu).cos()))
}

/// `(E[sin²x], E[cos²x], E[sin x cos x])` for `x ~ N(mu, var)`.
pub fn trig_second_moments(mu: f64, var: f64) -> Result<(f64, f64, f64)> {
    check_var(var)?;
    let damp = (-2.0 * var).exp();
    let c2 = (2.0 * mu).cos();
    Ok((
        0.5 * (1.0 - damp * c2),
        0.5 * (1.0 + damp * c2),
        0.5 * damp * (2.0 * mu).sin(),
    ))
}

/// `E[sin(k_a z_a)·sin(k_b z_b)]` for jointly Gaussian `(z_a, z_b)`.
///
/// Uses `sin A sin B = ½[cos(A−B) − cos(A+B)]` with `A ± B` Gaussian.
pub fn joint_trig_cross_moment(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    harmonics: (u32, u32),
) -> Result<f64> {
    let (saa, sbb) = (cov[0][0], cov[1][1]);
    let sab = 0.5 * (cov[0][1] + cov[1][0]);
    let det = saa * sbb - sab * sab;
    let tol = 1e-12 * (saa.abs() + sbb.abs()).max(f64::MIN_POSITIVE);
    if saa < 0.0 || sbb < 0.0 || det < -tol * (saa.abs() + sbb.abs()) {
        return Err(Error::NotPsd { min_eigenvalue: det, tolerance: tol });
    }
    let (ka, kb) = (harmonics.0 as f64, harmonics.1 as f64);
    let m_minus = ka * mean[0] - kb * mean[1];
    let m_plus = ka * mean[0] + kb * mean[1];
    let base = ka * ka * saa + kb * kb * sbb;
    let v_minus = (base - 2.0 * ka * kb * sab).max(0.0);
    let v_plus = (base + 2.0 * ka * kb * sab).max(0.0);
    let cos_minus = (-0.5 * v_minus).exp() * m_minus.cos();
    let cos_plus = (-0.5 * v_plus).exp() * m_plus.cos();
    Ok(0.5 * (cos_minus - cos_plus))
}

/// `E[sin(wᵀx + phase)]` for `x ~ N(m, S)` with its partial derivatives with respect to the
/// projected mean `wᵀm` and projected variance `wᵀSw`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ProjectedSine {
    pub value: f64,
    pub d_mean: f64,
    pub d_var: f64,
}

pub(crate) fn projected_sine(w: &DVector<f64>, phase: f64, m: &DVector<f64>, s: &DMatrix<f64>) -> ProjectedSine {
    let mu = w.dot(m);
    let var = (s * w).dot(w).max(0.0);
    let damp = (-0.5 * var).exp();
    let value = damp * (mu + phase).sin();
    ProjectedSine {
        value,
        d_mean: damp * (mu + phase).cos(),
        d_var: -0.5 * value,
    }
}
