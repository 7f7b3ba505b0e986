//! Gaussian moment propagation through trigonometric feature maps.
//!
//! A feature is `y = aᵀx + Σ_s c_s·sin(w_sᵀx + φ_s)`. Coordinate selection, the
//! `(sin θ, cos θ)` angle augmentation, the control squash `9/8·sin z + 1/8·sin 3z` and the
//! pendulum tip coordinates are all of this form, so one routine computes their exact mean
//! and covariance under a Gaussian input together with every derivative.
//!
//! Input-output covariances use Stein's lemma, `cov[x, g(x)] = S·E[∇g(x)]`, which yields the
//! premultiplied cross term `C = E[∇g]` directly without inverting `S`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::gaussian::{projected_sine, ProjectedSine};
use crate::tangent::{MapJacobian, MomentMap};

#[derive(Clone, Debug)]
pub struct TrigTerm {
    pub coeff: f64,
    pub weights: DVector<f64>,
    pub phase: f64,
}

#[derive(Clone, Debug)]
pub struct Feature {
    pub linear: DVector<f64>,
    pub trig: Vec<TrigTerm>,
}

impl Feature {
    pub fn zero(dim: usize) -> Self {
        Feature { linear: DVector::zeros(dim), trig: Vec::new() }
    }

    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut f = Self::zero(dim);
        f.linear[i] = 1.0;
        f
    }

    /// `coeff·sin(k·x_i)`.
    pub fn sine(dim: usize, i: usize, k: f64, coeff: f64) -> Self {
        Self::zero(dim).with_sine(i, k, coeff)
    }

    /// `coeff·cos(k·x_i)`.
    pub fn cosine(dim: usize, i: usize, k: f64, coeff: f64) -> Self {
        Self::zero(dim).with_cosine(i, k, coeff)
    }

    pub fn with_linear(mut self, i: usize, coeff: f64) -> Self {
        self.linear[i] += coeff;
        self
    }

    pub fn with_sine(mut self, i: usize, k: f64, coeff: f64) -> Self {
        let mut w = DVector::zeros(self.linear.len());
        w[i] = k;
        self.trig.push(TrigTerm { coeff, weights: w, phase: 0.0 });
        self
    }

    pub fn with_cosine(mut self, i: usize, k: f64, coeff: f64) -> Self {
        let mut w = DVector::zeros(self.linear.len());
        w[i] = k;
        self.trig.push(TrigTerm { coeff, weights: w, phase: FRAC_PI_2 });
        self
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.linear.dot(x)
            + self
                .trig
                .iter()
                .map(|t| t.coeff * (t.weights.dot(x) + t.phase).sin())
                .sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct FeatureMap {
    dim: usize,
    features: Vec<Feature>,
}

/// Accumulates `coef · (g_mean·w, g_var·w wᵀ)` into a mean-gradient row and a
/// covariance-gradient row.
fn accumulate(
    mean_row: &mut DMatrix<f64>,
    cov_row: &mut DMatrix<f64>,
    row: usize,
    coef: f64,
    ps: &ProjectedSine,
    w: &DVector<f64>,
) {
    let d = w.len();
    for k in 0..d {
        if w[k] != 0.0 {
            mean_row[(row, k)] += coef * ps.d_mean * w[k];
        }
    }
    let gv = coef * ps.d_var;
    if gv != 0.0 {
        for q in 0..d {
            if w[q] == 0.0 {
                continue;
            }
            for p in 0..d {
                if w[p] != 0.0 {
                    cov_row[(row, p + q * d)] += gv * w[p] * w[q];
                }
            }
        }
    }
}

impl FeatureMap {
    pub fn new(dim: usize, features: Vec<Feature>) -> Self {
        for f in &features {
            assert_eq!(f.linear.len(), dim, "feature dimension mismatch");
            for t in &f.trig {
                assert_eq!(t.weights.len(), dim, "feature dimension mismatch");
            }
        }
        FeatureMap { dim, features }
    }

    /// Keep the listed coordinates and append `(sin x_i, cos x_i)` for each angle index.
    pub fn angle_augmentation(dim: usize, keep: &[usize], angles: &[usize]) -> Self {
        let mut features: Vec<Feature> = keep.iter().map(|&i| Feature::coordinate(dim, i)).collect();
        for &i in angles {
            features.push(Feature::sine(dim, i, 1.0, 1.0));
            features.push(Feature::cosine(dim, i, 1.0, 1.0));
        }
        Self::new(dim, features)
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn output_dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.features.len(), self.features.iter().map(|f| f.evaluate(x)))
    }

    /// Exact mean, covariance and premultiplied input-output covariance of the features
    /// under `x ~ N(m, s)`, optionally with derivatives.
    pub fn moments(&self, m: &DVector<f64>, s: &DMatrix<f64>, with_jac: bool) -> MomentMap {
        let d = self.dim;
        let e = self.features.len();
        let mut mean = DVector::zeros(e);
        let mut cov = DMatrix::zeros(e, e);
        let mut cross = DMatrix::zeros(d, e);
        let mut jac = MapJacobian::zeros(d, e);

        // Expected trig parts of each feature and their sine/cosine projections.
        let mut trig_mean = vec![0.0; e];
        let mut sines: Vec<Vec<ProjectedSine>> = Vec::with_capacity(e);
        let mut cosines: Vec<Vec<ProjectedSine>> = Vec::with_capacity(e);
        let mut trig_mean_grad_m = DMatrix::zeros(e, d);
        let mut trig_mean_grad_s = DMatrix::zeros(e, d * d);

        for (r, f) in self.features.iter().enumerate() {
            let mut sr = Vec::with_capacity(f.trig.len());
            let mut cr = Vec::with_capacity(f.trig.len());
            for t in &f.trig {
                let ps = projected_sine(&t.weights, t.phase, m, s);
                let pc = projected_sine(&t.weights, t.phase + FRAC_PI_2, m, s);
                trig_mean[r] += t.coeff * ps.value;
                if with_jac {
                    accumulate(&mut trig_mean_grad_m, &mut trig_mean_grad_s, r, t.coeff, &ps, &t.weights);
                }
                sr.push(ps);
                cr.push(pc);
            }
            mean[r] = f.linear.dot(m) + trig_mean[r];

            // C column: a + Σ c·w·E[cos(wᵀx + φ)]
            let mut col = f.linear.clone();
            for (t, pc) in f.trig.iter().zip(&cr) {
                col.axpy(t.coeff * pc.value, &t.weights, 1.0);
                if with_jac {
                    for k in 0..d {
                        if t.weights[k] == 0.0 {
                            continue;
                        }
                        let row = k + r * d;
                        let coef = t.coeff * t.weights[k];
                        accumulate(&mut jac.cross_mean, &mut jac.cross_cov, row, coef, pc, &t.weights);
                    }
                }
            }
            cross.set_column(r, &col);
            sines.push(sr);
            cosines.push(cr);
        }

        if with_jac {
            for r in 0..e {
                let a = &self.features[r].linear;
                for k in 0..d {
                    jac.mean_mean[(r, k)] = a[k] + trig_mean_grad_m[(r, k)];
                }
                jac.mean_cov.row_mut(r).copy_from(&trig_mean_grad_s.row(r));
            }
        }

        let mut row_m = DMatrix::zeros(1, d);
        let mut row_s = DMatrix::zeros(1, d * d);
        for r in 0..e {
            for t in r..e {
                let fr = &self.features[r];
                let ft = &self.features[t];
                if with_jac {
                    row_m.fill(0.0);
                    row_s.fill(0.0);
                }
                // linear × linear
                let sa_t = s * &ft.linear;
                let mut value = fr.linear.dot(&sa_t);
                if with_jac {
                    for q in 0..d {
                        if ft.linear[q] == 0.0 {
                            continue;
                        }
                        for p in 0..d {
                            row_s[(0, p + q * d)] += fr.linear[p] * ft.linear[q];
                        }
                    }
                }
                // linear × trig, both orders
                for (lin, other, other_cos) in [(&fr.linear, ft, &cosines[t]), (&ft.linear, fr, &cosines[r])] {
                    if lin.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for (term, pc) in other.trig.iter().zip(other_cos.iter()) {
                        let sw = s * &term.weights;
                        let proj = lin.dot(&sw);
                        value += term.coeff * proj * pc.value;
                        if with_jac {
                            for q in 0..d {
                                if term.weights[q] == 0.0 {
                                    continue;
                                }
                                for p in 0..d {
                                    row_s[(0, p + q * d)] += term.coeff * pc.value * lin[p] * term.weights[q];
                                }
                            }
                            accumulate(&mut row_m, &mut row_s, 0, term.coeff * proj, pc, &term.weights);
                        }
                    }
                }
                // trig × trig
                if !fr.trig.is_empty() && !ft.trig.is_empty() {
                    for tr in &fr.trig {
                        for tt in &ft.trig {
                            let half = 0.5 * tr.coeff * tt.coeff;
                            let wd = &tr.weights - &tt.weights;
                            let ws = &tr.weights + &tt.weights;
                            let pd = projected_sine(&wd, tr.phase - tt.phase + FRAC_PI_2, m, s);
                            let psum = projected_sine(&ws, tr.phase + tt.phase + FRAC_PI_2, m, s);
                            value += half * (pd.value - psum.value);
                            if with_jac {
                                accumulate(&mut row_m, &mut row_s, 0, half, &pd, &wd);
                                accumulate(&mut row_m, &mut row_s, 0, -half, &psum, &ws);
                            }
                        }
                    }
                    value -= trig_mean[r] * trig_mean[t];
                    if with_jac {
                        for k in 0..d {
                            row_m[(0, k)] -= trig_mean_grad_m[(r, k)] * trig_mean[t]
                                + trig_mean[r] * trig_mean_grad_m[(t, k)];
                        }
                        for k in 0..d * d {
                            row_s[(0, k)] -= trig_mean_grad_s[(r, k)] * trig_mean[t]
                                + trig_mean[r] * trig_mean_grad_s[(t, k)];
                        }
                    }
                }
                cov[(r, t)] = value;
                cov[(t, r)] = value;
                if with_jac {
                    jac.cov_mean.row_mut(r + t * e).copy_from(&row_m.row(0));
                    jac.cov_mean.row_mut(t + r * e).copy_from(&row_m.row(0));
                    jac.cov_cov.row_mut(r + t * e).copy_from(&row_s.row(0));
                    jac.cov_cov.row_mut(t + r * e).copy_from(&row_s.row(0));
                }
            }
        }

        let jac = if with_jac {
            jac.symmetrize(d, e);
            Some(jac)
        } else {
            None
        };
        MomentMap { mean, cov, cross, jac }
    }
}
