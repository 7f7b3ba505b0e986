//! Forward-mode derivative bookkeeping for moment propagation.
//!
//! A [`Tangent`] is a matrix-valued quantity carried together with its Jacobian against a
//! fixed list of upstream variables (for a rollout: the policy parameters; for a single step:
//! the predecessor mean, covariance and policy parameters). Row `i + j·nrows` of the Jacobian
//! holds the gradient of entry `(i, j)`, i.e. column-major vectorization as in nalgebra.
//!
//! Moment maps report their local Jacobians in a [`MapJacobian`]; pushing upstream tangents
//! through it is the chain rule `dOut/dθ = ∂Out/∂m · dm/dθ + ∂Out/∂S · dS/dθ`.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct Tangent {
    pub value: DMatrix<f64>,
    pub jac: DMatrix<f64>,
}

impl Tangent {
    pub fn new(value: DMatrix<f64>, jac: DMatrix<f64>) -> Self {
        assert_eq!(jac.nrows(), value.len(), "tangent jacobian rows must match value size");
        Tangent { value, jac }
    }

    pub fn constant(value: DMatrix<f64>, nvars: usize) -> Self {
        let rows = value.len();
        Tangent { value, jac: DMatrix::zeros(rows, nvars) }
    }

    pub fn from_vector(value: DVector<f64>, jac: DMatrix<f64>) -> Self {
        let n = value.len();
        Self::new(value.reshape_generic(nalgebra::Dyn(n), nalgebra::Dyn(1)), jac)
    }

    /// Independent variables: the Jacobian is the identity placed at column `offset`.
    pub fn seed(value: DMatrix<f64>, nvars: usize, offset: usize) -> Self {
        let rows = value.len();
        let mut jac = DMatrix::zeros(rows, nvars);
        for r in 0..rows {
            jac[(r, offset + r)] = 1.0;
        }
        Tangent { value, jac }
    }

    pub fn nvars(&self) -> usize {
        self.jac.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.value.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.value.ncols()
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.value.as_slice())
    }

    /// Product rule: `d(AB) = dA·B + A·dB`.
    pub fn matmul(&self, rhs: &Tangent) -> Tangent {
        let (r, c) = (self.nrows(), self.ncols());
        let c2 = rhs.ncols();
        assert_eq!(c, rhs.nrows(), "matmul shape mismatch");
        assert_eq!(self.nvars(), rhs.nvars(), "matmul variable mismatch");
        let value = &self.value * &rhs.value;
        let nv = self.nvars();
        let mut jac = DMatrix::zeros(r * c2, nv);
        for k in 0..nv {
            let da = self.jac.column(k);
            let db = rhs.jac.column(k);
            let mut out = jac.column_mut(k);
            for j in 0..c2 {
                for l in 0..c {
                    let b = rhs.value[(l, j)];
                    let dbl = db[l + j * c];
                    for i in 0..r {
                        out[i + j * r] += da[i + l * r] * b + self.value[(i, l)] * dbl;
                    }
                }
            }
        }
        Tangent { value, jac }
    }

    pub fn transpose(&self) -> Tangent {
        let (r, c) = (self.nrows(), self.ncols());
        let mut jac = DMatrix::zeros(r * c, self.nvars());
        for i in 0..r {
            for j in 0..c {
                jac.row_mut(j + i * c).copy_from(&self.jac.row(i + j * r));
            }
        }
        Tangent { value: self.value.transpose(), jac }
    }

    pub fn add(&self, other: &Tangent) -> Tangent {
        Tangent { value: &self.value + &other.value, jac: &self.jac + &other.jac }
    }

    pub fn sub(&self, other: &Tangent) -> Tangent {
        Tangent { value: &self.value - &other.value, jac: &self.jac - &other.jac }
    }

    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Tangent {
        let r = self.nrows();
        let (nr, nc) = (rows.len(), cols.len());
        let value = self.value.view((rows.start, cols.start), (nr, nc)).into_owned();
        let mut jac = DMatrix::zeros(nr * nc, self.nvars());
        for (jj, j) in cols.clone().enumerate() {
            for (ii, i) in rows.clone().enumerate() {
                jac.row_mut(ii + jj * nr).copy_from(&self.jac.row(i + j * r));
            }
        }
        Tangent { value, jac }
    }

    /// Assemble `[[a, b], [c, d]]` from four tangents.
    pub fn from_blocks(a: &Tangent, b: &Tangent, c: &Tangent, d: &Tangent) -> Tangent {
        let (r1, c1) = (a.nrows(), a.ncols());
        let (r2, c2) = (d.nrows(), d.ncols());
        let (r, cc) = (r1 + r2, c1 + c2);
        let nv = a.nvars();
        let mut value = DMatrix::zeros(r, cc);
        let mut jac = DMatrix::zeros(r * cc, nv);
        let mut put = |t: &Tangent, ro: usize, co: usize| {
            for j in 0..t.ncols() {
                for i in 0..t.nrows() {
                    value[(ro + i, co + j)] = t.value[(i, j)];
                    jac.row_mut((ro + i) + (co + j) * r)
                        .copy_from(&t.jac.row(i + j * t.nrows()));
                }
            }
        };
        put(a, 0, 0);
        put(b, 0, c1);
        put(c, r1, 0);
        put(d, r1, c1);
        Tangent { value, jac }
    }

    /// Stack two column vectors.
    pub fn vstack(top: &Tangent, bottom: &Tangent) -> Tangent {
        assert_eq!(top.ncols(), 1);
        assert_eq!(bottom.ncols(), 1);
        let n1 = top.nrows();
        let n = n1 + bottom.nrows();
        let mut value = DMatrix::zeros(n, 1);
        let mut jac = DMatrix::zeros(n, top.nvars());
        value.view_mut((0, 0), (n1, 1)).copy_from(&top.value);
        value.view_mut((n1, 0), (n - n1, 1)).copy_from(&bottom.value);
        jac.view_mut((0, 0), (n1, top.nvars())).copy_from(&top.jac);
        jac.view_mut((n1, 0), (n - n1, top.nvars())).copy_from(&bottom.jac);
        Tangent { value, jac }
    }

    /// Replace value and Jacobian by their symmetric parts (square values only).
    pub fn symmetrize(&mut self) {
        let d = self.nrows();
        assert_eq!(d, self.ncols());
        crate::linalg::symmetrize(&mut self.value);
        crate::linalg::symmetrize_cov_rows(&mut self.jac, d);
    }

    /// Add `jac` into the columns `offset..offset+jac.ncols()`.
    pub fn add_direct(&mut self, jac: &DMatrix<f64>, offset: usize) {
        let mut view = self.jac.view_mut((0, offset), (jac.nrows(), jac.ncols()));
        view += jac;
    }
}

/// Local Jacobian of a moment map `(m, S) ↦ (M, S', C)` where `m`, `S` are the input mean and
/// covariance (dimension `d`), `M`, `S'` the output mean and covariance (dimension `e`) and `C`
/// a `d×e` matrix. Covariance columns follow the symmetric convention: for any symmetric
/// perturbation `dS`, `Σ_pq J[:, p+q·d]·dS_pq` is the directional derivative.
#[derive(Clone, Debug)]
pub struct MapJacobian {
    pub mean_mean: DMatrix<f64>,
    pub mean_cov: DMatrix<f64>,
    pub cov_mean: DMatrix<f64>,
    pub cov_cov: DMatrix<f64>,
    pub cross_mean: DMatrix<f64>,
    pub cross_cov: DMatrix<f64>,
}

impl MapJacobian {
    pub fn zeros(d: usize, e: usize) -> Self {
        MapJacobian {
            mean_mean: DMatrix::zeros(e, d),
            mean_cov: DMatrix::zeros(e, d * d),
            cov_mean: DMatrix::zeros(e * e, d),
            cov_cov: DMatrix::zeros(e * e, d * d),
            cross_mean: DMatrix::zeros(d * e, d),
            cross_cov: DMatrix::zeros(d * e, d * d),
        }
    }

    pub fn symmetrize(&mut self, d: usize, e: usize) {
        use crate::linalg::{symmetrize_cov_columns, symmetrize_cov_rows};
        symmetrize_cov_columns(&mut self.mean_cov, d);
        symmetrize_cov_columns(&mut self.cov_cov, d);
        symmetrize_cov_columns(&mut self.cross_cov, d);
        symmetrize_cov_rows(&mut self.cov_mean, e);
        symmetrize_cov_rows(&mut self.cov_cov, e);
    }
}

/// Output of a Gaussian moment map: mean, covariance and the input-output covariance in
/// "premultiplied" form `C` with `cov[input, output] = S_input · C`.
#[derive(Clone, Debug)]
pub struct MomentMap {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub jac: Option<MapJacobian>,
}

/// Tangents of a pushed-forward moment map.
pub struct PushedMoments {
    pub mean: Tangent,
    pub cov: Tangent,
    pub cross: Tangent,
}

impl MomentMap {
    /// Chain the local Jacobian with the upstream tangents of the input mean and covariance.
    /// Without a local Jacobian only constant (zero-variable) tangents can be pushed.
    pub fn push(&self, mean: &Tangent, cov: &Tangent) -> PushedMoments {
        let e = self.mean.len();
        let mean_val = self.mean.clone().reshape_generic(nalgebra::Dyn(e), nalgebra::Dyn(1));
        let Some(jac) = self.jac.as_ref() else {
            assert_eq!(mean.nvars(), 0, "moment map computed without derivatives");
            return PushedMoments {
                mean: Tangent::constant(mean_val, 0),
                cov: Tangent::constant(self.cov.clone(), 0),
                cross: Tangent::constant(self.cross.clone(), 0),
            };
        };
        PushedMoments {
            mean: Tangent::new(mean_val, &jac.mean_mean * &mean.jac + &jac.mean_cov * &cov.jac),
            cov: Tangent::new(self.cov.clone(), &jac.cov_mean * &mean.jac + &jac.cov_cov * &cov.jac),
            cross: Tangent::new(
                self.cross.clone(),
                &jac.cross_mean * &mean.jac + &jac.cross_cov * &cov.jac,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(f: impl Fn(f64) -> DMatrix<f64>) -> DMatrix<f64> {
        let h = 1e-6;
        (f(h) - f(-h)) / (2.0 * h)
    }

    #[test]
    fn matmul_transpose_block_follow_product_rule() {
        // A(t) = A0 + t·A1, B(t) = B0 + t·B1 with one upstream variable t.
        let a0 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.3, 2.0]);
        let a1 = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 0.7, -1.0, 0.2]);
        let b0 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -2.0, 1.5, 0.2, 0.4]);
        let b1 = DMatrix::from_row_slice(3, 2, &[0.3, 0.9, -0.1, 0.0, 1.1, -0.6]);
        let ta = Tangent::new(a0.clone(), DMatrix::from_column_slice(6, 1, a1.as_slice()));
        let tb = Tangent::new(b0.clone(), DMatrix::from_column_slice(6, 1, b1.as_slice()));
        let prod = ta.matmul(&tb).transpose().block(0..2, 1..2);
        let num = numeric(|t| {
            let p = (&a0 + t * &a1) * (&b0 + t * &b1);
            p.transpose().view((0, 1), (2, 1)).into_owned()
        });
        for i in 0..2 {
            assert!((prod.jac[(i, 0)] - num[(i, 0)]).abs() < 1e-8);
        }
    }

    #[test]
    fn from_blocks_places_jacobian_rows() {
        let nv = 2;
        let a = Tangent::seed(DMatrix::from_element(1, 1, 1.0), nv, 0);
        let d = Tangent::seed(DMatrix::from_element(1, 1, 2.0), nv, 1);
        let z = Tangent::constant(DMatrix::zeros(1, 1), nv);
        let m = Tangent::from_blocks(&a, &z, &z, &d);
        assert_eq!(m.jac[(0, 0)], 1.0);
        assert_eq!(m.jac[(3, 1)], 1.0);
        assert_eq!(m.value[(1, 1)], 2.0);
    }
}
