//! Independent numerical oracles: Gauss-Hermite quadrature, Monte Carlo moment estimates with
//! standard errors, and finite-difference Jacobians. Tests and the `oracle-check` /
//! `grad-check` commands both build on these.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::tangent::MomentMap;

/// Gauss-Hermite nodes and weights for `∫ e^{-x²} f(x) dx` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], PI.sqrt() * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[f(x)]` for `x ~ N(mu, var)` by Gauss-Hermite quadrature.
pub fn gh_expectation(f: impl Fn(f64) -> f64, mu: f64, var: f64, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let s = (2.0 * var).sqrt();
    nodes.0.iter().zip(&nodes.1).map(|(&x, &w)| w * f(mu + s * x)).sum::<f64>() / PI.sqrt()
}

/// Random symmetric positive-definite matrix with eigenvalues in `[0.05, 1]·scale`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let eig = DVector::from_fn(d, |_, _| scale * rng.gen_range(0.05..1.0));
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

/// Sampler for `N(m, S)` with `S` positive semidefinite (eigen factor, so singular `S` works).
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(crate::linalg::symmetrized(cov.clone()));
        let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sq);
        MvnSampler { mean, factor }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// Running Monte Carlo estimate of the mean and covariance of `y` and the covariance of
/// `(x, y)`, with standard errors for every entry. Products are accumulated around a fixed
/// shift (typically the closed-form mean) to avoid cancellation.
pub struct McMoments {
    n: usize,
    shift_x: DVector<f64>,
    shift_y: DVector<f64>,
    sum_y: DVector<f64>,
    sum_y2: DVector<f64>,
    sum_x: DVector<f64>,
    sum_yy: DMatrix<f64>,
    sum_yy2: DMatrix<f64>,
    sum_xy: DMatrix<f64>,
    sum_xy2: DMatrix<f64>,
}

/// Estimates and standard errors produced by [`McMoments`].
pub struct McEstimate {
    pub mean: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cov_se: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub cross_se: DMatrix<f64>,
}

impl McMoments {
    pub fn new(shift_x: DVector<f64>, shift_y: DVector<f64>) -> Self {
        let (d, e) = (shift_x.len(), shift_y.len());
        McMoments {
            n: 0,
            shift_x,
            shift_y,
            sum_y: DVector::zeros(e),
            sum_y2: DVector::zeros(e),
            sum_x: DVector::zeros(d),
            sum_yy: DMatrix::zeros(e, e),
            sum_yy2: DMatrix::zeros(e, e),
            sum_xy: DMatrix::zeros(d, e),
            sum_xy2: DMatrix::zeros(d, e),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>, y: &DVector<f64>) {
        let dx = x - &self.shift_x;
        let dy = y - &self.shift_y;
        self.n += 1;
        self.sum_y += &dy;
        self.sum_y2 += dy.component_mul(&dy);
        self.sum_x += &dx;
        for b in 0..dy.len() {
            for a in 0..dy.len() {
                let p = dy[a] * dy[b];
                self.sum_yy[(a, b)] += p;
                self.sum_yy2[(a, b)] += p * p;
            }
            for a in 0..dx.len() {
                let p = dx[a] * dy[b];
                self.sum_xy[(a, b)] += p;
                self.sum_xy2[(a, b)] += p * p;
            }
        }
    }

    pub fn estimate(&self) -> McEstimate {
        let n = self.n as f64;
        let my = &self.sum_y / n;
        let mx = &self.sum_x / n;
        let var_y = (&self.sum_y2 / n) - my.component_mul(&my);
        let mean_se = var_y.map(|v| (v.max(0.0) / n).sqrt());
        let e = my.len();
        let d = mx.len();
        let mut cov = DMatrix::zeros(e, e);
        let mut cov_se = DMatrix::zeros(e, e);
        for a in 0..e {
            for b in 0..e {
                let m1 = self.sum_yy[(a, b)] / n;
                cov[(a, b)] = m1 - my[a] * my[b];
                cov_se[(a, b)] = ((self.sum_yy2[(a, b)] / n - m1 * m1).max(0.0) / n).sqrt();
            }
        }
        let mut cross = DMatrix::zeros(d, e);
        let mut cross_se = DMatrix::zeros(d, e);
        for a in 0..d {
            for b in 0..e {
                let m1 = self.sum_xy[(a, b)] / n;
                cross[(a, b)] = m1 - mx[a] * my[b];
                cross_se[(a, b)] = ((self.sum_xy2[(a, b)] / n - m1 * m1).max(0.0) / n).sqrt();
            }
        }
        McEstimate { mean: my + &self.shift_y, mean_se, cov, cov_se, cross, cross_se }
    }
}

/// Largest `|closed − mc| / se` over all entries. Entries whose standard error is below
/// `1e-300` must agree exactly up to `abs_floor`.
pub fn max_z_score(closed: &[f64], mc: &[f64], se: &[f64], abs_floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for ((c, m), s) in closed.iter().zip(mc).zip(se) {
        let diff = (c - m).abs();
        let z = if diff <= abs_floor {
            0.0
        } else if *s > 1e-300 {
            diff / s
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    worst
}

/// Central finite-difference Jacobian with the fourth-order five-point stencil.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for k in 0..x.len() {
        let at = |t: f64| {
            let mut y = x.clone();
            y[k] += t;
            f(&y)
        };
        let col = (at(-2.0 * h) - at(2.0 * h) + 8.0 * (at(h) - at(-h))) / (12.0 * h);
        jac.set_column(k, &col);
    }
    jac
}

/// Largest elementwise relative error `|a − n| / max(|n|, floor)` where `floor` is
/// `rel_floor` times the largest numeric entry of the column block. Entries whose magnitude
/// is below `1e-8` in both matrices are compared on the absolute scale `floor`.
pub fn max_rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, rel_floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let scale = numeric.amax().max(analytic.amax());
    let floor = (rel_floor * scale).max(1e-12);
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let err = (a - n).abs() / n.abs().max(a.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// Pack `(m, upper triangle of S)` into one vector.
pub fn pack_moments(m: &DVector<f64>, s: &DMatrix<f64>) -> DVector<f64> {
    let d = m.len();
    let mut v = m.as_slice().to_vec();
    for q in 0..d {
        for p in 0..=q {
            v.push(s[(p, q)]);
        }
    }
    DVector::from_vec(v)
}

pub fn unpack_moments(v: &DVector<f64>, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let m = DVector::from_column_slice(&v.as_slice()[..d]);
    let mut s = DMatrix::zeros(d, d);
    let mut k = d;
    for q in 0..d {
        for p in 0..=q {
            s[(p, q)] = v[k];
            s[(q, p)] = v[k];
            k += 1;
        }
    }
    (m, s)
}

/// Convert a Jacobian taken against column-major `vec(S)` (symmetric convention) into one
/// against the packed upper triangle used by [`pack_moments`].
pub fn packed_cov_columns(jac_cov: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(jac_cov.nrows(), d * (d + 1) / 2);
    let mut k = 0;
    for q in 0..d {
        for p in 0..=q {
            let mut col = jac_cov.column(p + q * d).into_owned();
            if p != q {
                col += jac_cov.column(q + p * d);
            }
            out.set_column(k, &col);
            k += 1;
        }
    }
    out
}

fn flatten_map(out: &MomentMap) -> DVector<f64> {
    let mut v = out.mean.as_slice().to_vec();
    v.extend_from_slice(out.cov.as_slice());
    v.extend_from_slice(out.cross.as_slice());
    DVector::from_vec(v)
}

/// Compare every block of a moment map's Jacobian with finite differences; returns the
/// worst relative error.
pub fn fd_check_moment_map(
    f: impl Fn(&DVector<f64>, &DMatrix<f64>, bool) -> MomentMap,
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    h: f64,
) -> f64 {
    let d = m.len();
    let out = f(m, s, true);
    let jac = out.jac.as_ref().expect("jacobian requested");
    let numeric = fd_jacobian(
        |v| {
            let (m, s) = unpack_moments(v, d);
            flatten_map(&f(&m, &s, false))
        },
        &pack_moments(m, s),
        h,
    );
    let e = out.mean.len();
    let blocks = [
        (0, e, &jac.mean_mean, &jac.mean_cov),
        (e, e * e, &jac.cov_mean, &jac.cov_cov),
        (e + e * e, d * e, &jac.cross_mean, &jac.cross_cov),
    ];
    let mut worst: f64 = 0.0;
    for (row0, rows, jm, js) in blocks {
        let num_m = numeric.view((row0, 0), (rows, d)).into_owned();
        let num_s = numeric.view((row0, d), (rows, numeric.ncols() - d)).into_owned();
        worst = worst.max(max_rel_err(jm, &num_m, 1e-6));
        worst = worst.max(max_rel_err(&packed_cov_columns(js, d), &num_s, 1e-6));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_integrates_polynomials() {
        let nodes = gauss_hermite(20);
        let m2 = gh_expectation(|x| x * x, 1.0, 2.0, &nodes);
        assert!((m2 - 3.0).abs() < 1e-12);
        let m4 = gh_expectation(|x| x.powi(4), 0.0, 1.0, &nodes);
        assert!((m4 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fd_jacobian_of_polynomial_is_exact() {
        let x = DVector::from_vec(vec![0.5, -1.5]);
        let j = fd_jacobian(|x| DVector::from_vec(vec![x[0] * x[0] * x[1], x[1].powi(3)]), &x, 1e-3);
        assert!((j[(0, 0)] - 2.0 * 0.5 * -1.5).abs() < 1e-10);
        assert!((j[(0, 1)] - 0.25).abs() < 1e-10);
        assert!((j[(1, 1)] - 3.0 * 2.25).abs() < 1e-10);
    }

    #[test]
    fn pack_roundtrip() {
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        let (m2, s2) = unpack_moments(&pack_moments(&m, &s), 2);
        assert_eq!(m, m2);
        assert_eq!(s, s2);
    }
}
