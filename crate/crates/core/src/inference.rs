//! Prediction of GP outputs for Gaussian-distributed inputs.
//!
//! [`moment_match`] returns the exact mean and covariance of the predictive distribution
//! (integrating over both the input and the GP posterior), [`linearize_predict`] the
//! approximation obtained by linearizing the posterior mean around the input mean.
//!
//! Gradient blocks are stored with column-major vectorization, matching nalgebra: the output
//! covariance entry `(a, b)` is row `a + b·E` and the input covariance entry `(p, q)` is column
//! `p + q·D`. Use the accessor methods of [`InferenceGradients`] rather than raw indices.
//! Derivatives with respect to the input covariance treat `(p, q)` and `(q, p)` as one
//! symmetric perturbation split evenly between both entries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{expansion_moments, ExpansionOutput};
use crate::gaussian::GaussianBelief;
use crate::gp::{se_cross, GpModel};
use crate::tangent::{MapJacobian, MomentMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    #[default]
    MomentMatch,
    Linearize,
}

/// Whether the posterior model uncertainty enters the predicted covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelUncertainty {
    #[default]
    Bayesian,
    /// Only the posterior mean is used; observation noise and input uncertainty are still
    /// propagated.
    DeterministicMean,
}

#[derive(Clone, Debug)]
pub struct UncertainPrediction {
    pub delta_mean: DVector<f64>,
    pub delta_cov: DMatrix<f64>,
    /// `cov[x̃, Δ]`, `(D+F)×E`.
    pub input_delta_cross_cov: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct InferenceGradients {
    pub d_mean_d_input_mean: DMatrix<f64>,
    pub d_mean_d_input_cov: DMatrix<f64>,
    pub d_cov_d_input_mean: DMatrix<f64>,
    pub d_cov_d_input_cov: DMatrix<f64>,
    pub d_crosscov_d_input_mean: DMatrix<f64>,
    pub d_crosscov_d_input_cov: DMatrix<f64>,
    input_dim: usize,
    output_dim: usize,
}

impl InferenceGradients {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `∂μ_Δ[a] / ∂Σ̃[p, q]`
    pub fn mean_wrt_cov(&self, a: usize, p: usize, q: usize) -> f64 {
        self.d_mean_d_input_cov[(a, p + q * self.input_dim)]
    }

    /// `∂Σ_Δ[a, b] / ∂μ̃[k]`
    pub fn cov_wrt_mean(&self, a: usize, b: usize, k: usize) -> f64 {
        self.d_cov_d_input_mean[(a + b * self.output_dim, k)]
    }

    /// `∂Σ_Δ[a, b] / ∂Σ̃[p, q]`
    pub fn cov_wrt_cov(&self, a: usize, b: usize, p: usize, q: usize) -> f64 {
        self.d_cov_d_input_cov[(a + b * self.output_dim, p + q * self.input_dim)]
    }

    /// `∂cov[x̃, Δ][k, a] / ∂μ̃[l]`
    pub fn crosscov_wrt_mean(&self, k: usize, a: usize, l: usize) -> f64 {
        self.d_crosscov_d_input_mean[(k + a * self.input_dim, l)]
    }

    /// `∂cov[x̃, Δ][k, a] / ∂Σ̃[p, q]`
    pub fn crosscov_wrt_cov(&self, k: usize, a: usize, p: usize, q: usize) -> f64 {
        self.d_crosscov_d_input_cov[(k + a * self.input_dim, p + q * self.input_dim)]
    }
}

fn check_input(model: &GpModel, m: &DVector<f64>) -> Result<()> {
    if m.len() != model.input_dim() {
        return Err(Error::dim(format!(
            "input belief of dimension {} for a model with {} inputs",
            m.len(),
            model.input_dim()
        )));
    }
    if model.is_empty() {
        return Err(Error::Domain("model has no training data".into()));
    }
    Ok(())
}

/// Predictive moments in premultiplied form: `cov[x̃, Δ] = S̃·cross`.
pub(crate) fn gp_moment_map(
    model: &GpModel,
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    method: InferenceMethod,
    uncertainty: ModelUncertainty,
    with_jac: bool,
) -> Result<MomentMap> {
    check_input(model, m)?;
    match method {
        InferenceMethod::MomentMatch => {
            let outs: Vec<ExpansionOutput> = model
                .outputs()
                .iter()
                .map(|o| ExpansionOutput {
                    log_ell: o.hyperparams().log_length_scales(),
                    sf2: o.hyperparams().signal_var(),
                    beta: o.beta(),
                    inv_k: (uncertainty == ModelUncertainty::Bayesian).then(|| o.inv_k()),
                    noise: o.hyperparams().noise_var(),
                })
                .collect();
            Ok(expansion_moments(model.inputs(), &outs, m, s, with_jac)?.map)
        }
        InferenceMethod::Linearize => Ok(linearized(model, m, s, uncertainty, with_jac)),
    }
}

fn linearized(
    model: &GpModel,
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    uncertainty: ModelUncertainty,
    with_jac: bool,
) -> MomentMap {
    let x = model.inputs();
    let (n, d) = x.shape();
    let e = model.output_dim();
    let q = DMatrix::from_row_slice(1, d, m.as_slice());
    let mut mean = DVector::zeros(e);
    let mut v = DMatrix::zeros(e, d);
    let mut hess = Vec::with_capacity(e);
    let mut extra_var = DVector::zeros(e);
    let mut dvar = DMatrix::zeros(e, d);
    for (a, o) in model.outputs().iter().enumerate() {
        let hp = o.hyperparams();
        let inv_ell2 = hp.length_scales().map(|l| l.powi(-2));
        let k = se_cross(x, &q, &inv_ell2.map(f64::sqrt), hp.signal_var()).column(0).into_owned();
        // rows Λ⁻¹ν_i
        let g = DMatrix::from_fn(n, d, |i, c| (x[(i, c)] - m[c]) * inv_ell2[c]);
        let bk = o.beta().component_mul(&k);
        mean[a] = bk.sum();
        v.row_mut(a).copy_from(&g.tr_mul(&bk).transpose());
        extra_var[a] = hp.noise_var();
        let ik_k = o.inv_k() * &k;
        if uncertainty == ModelUncertainty::Bayesian {
            extra_var[a] += (hp.signal_var() - k.dot(&ik_k)).max(0.0);
        }
        if with_jac {
            let gb = DMatrix::from_fn(n, d, |i, c| g[(i, c)] * bk[i]);
            let mut h = g.tr_mul(&gb);
            for c in 0..d {
                h[(c, c)] -= mean[a] * inv_ell2[c];
            }
            hess.push(h);
            if uncertainty == ModelUncertainty::Bayesian {
                let w = ik_k.component_mul(&k);
                dvar.row_mut(a).copy_from(&(-2.0 * g.tr_mul(&w)).transpose());
            }
        }
    }
    let sv = s * v.transpose();
    let mut cov = &v * &sv;
    for a in 0..e {
        cov[(a, a)] += extra_var[a];
    }
    crate::linalg::symmetrize(&mut cov);
    let cross = v.transpose();
    let jac = with_jac.then(|| {
        let mut jac = MapJacobian::zeros(d, e);
        jac.mean_mean.copy_from(&v);
        for a in 0..e {
            for b in 0..e {
                let row = a + b * e;
                let dm = &hess[a] * sv.column(b) + &hess[b] * sv.column(a);
                for k in 0..d {
                    jac.cov_mean[(row, k)] = dm[k] + if a == b { dvar[(a, k)] } else { 0.0 };
                }
                for qq in 0..d {
                    for p in 0..d {
                        jac.cov_cov[(row, p + qq * d)] = v[(a, p)] * v[(b, qq)];
                    }
                }
            }
            for k in 0..d {
                for l in 0..d {
                    jac.cross_mean[(k + a * d, l)] = hess[a][(k, l)];
                }
            }
        }
        jac.symmetrize(d, e);
        jac
    });
    MomentMap { mean, cov, cross, jac }
}

fn to_prediction(map: &MomentMap, s: &DMatrix<f64>) -> UncertainPrediction {
    UncertainPrediction {
        delta_mean: map.mean.clone(),
        delta_cov: map.cov.clone(),
        input_delta_cross_cov: s * &map.cross,
    }
}

fn to_gradients(map: &MomentMap, s: &DMatrix<f64>) -> InferenceGradients {
    let jac = map.jac.as_ref().expect("jacobian computed");
    let d = s.nrows();
    let e = map.mean.len();
    // cross-cov = S·C: d/dm = S·dC/dm; d/dS_pq = E_pq·C + S·dC/dS_pq (symmetrized)
    let mut dcm = DMatrix::zeros(d * e, d);
    let mut dcs = DMatrix::zeros(d * e, d * d);
    for a in 0..e {
        for col in 0..d {
            let dc = DVector::from_fn(d, |k, _| jac.cross_mean[(k + a * d, col)]);
            let v = s * dc;
            for k in 0..d {
                dcm[(k + a * d, col)] = v[k];
            }
        }
        for col in 0..d * d {
            let dc = DVector::from_fn(d, |k, _| jac.cross_cov[(k + a * d, col)]);
            let v = s * dc;
            let (p, q) = (col % d, col / d);
            for k in 0..d {
                let mut val = v[k];
                if k == p {
                    val += 0.5 * map.cross[(q, a)];
                }
                if k == q {
                    val += 0.5 * map.cross[(p, a)];
                }
                dcs[(k + a * d, col)] = val;
            }
        }
    }
    InferenceGradients {
        d_mean_d_input_mean: jac.mean_mean.clone(),
        d_mean_d_input_cov: jac.mean_cov.clone(),
        d_cov_d_input_mean: jac.cov_mean.clone(),
        d_cov_d_input_cov: jac.cov_cov.clone(),
        d_crosscov_d_input_mean: dcm,
        d_crosscov_d_input_cov: dcs,
        input_dim: d,
        output_dim: e,
    }
}

/// Exact predictive moments for a Gaussian input.
pub fn moment_match(model: &GpModel, input: &GaussianBelief) -> Result<UncertainPrediction> {
    predict(model, input, InferenceMethod::MomentMatch, ModelUncertainty::Bayesian)
}

/// Predictive moments from the linearized posterior mean.
pub fn linearize_predict(model: &GpModel, input: &GaussianBelief) -> Result<UncertainPrediction> {
    predict(model, input, InferenceMethod::Linearize, ModelUncertainty::Bayesian)
}

pub fn predict(
    model: &GpModel,
    input: &GaussianBelief,
    method: InferenceMethod,
    uncertainty: ModelUncertainty,
) -> Result<UncertainPrediction> {
    let map = gp_moment_map(model, input.mean(), input.cov(), method, uncertainty, false)?;
    Ok(to_prediction(&map, input.cov()))
}

/// All six derivative blocks of [`moment_match`].
pub fn moment_match_gradients(model: &GpModel, input: &GaussianBelief) -> Result<InferenceGradients> {
    prediction_gradients(model, input, InferenceMethod::MomentMatch, ModelUncertainty::Bayesian)
}

pub fn prediction_gradients(
    model: &GpModel,
    input: &GaussianBelief,
    method: InferenceMethod,
    uncertainty: ModelUncertainty,
) -> Result<InferenceGradients> {
    let map = gp_moment_map(model, input.mean(), input.cov(), method, uncertainty, true)?;
    Ok(to_gradients(&map, input.cov()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpHyperparams;
    use crate::verify::{fd_jacobian, max_rel_err, pack_moments, packed_cov_columns, random_spd, unpack_moments};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, n: usize, d: usize, e: usize) -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0));
        let y = DMatrix::from_fn(n, e, |i, a| (x[(i, 0)] * (a + 1) as f64).sin() + 0.3 * x[(i, d - 1)]);
        let hps = (0..e)
            .map(|_| {
                let ell: Vec<f64> = (0..d).map(|_| rng.gen_range(0.6..1.5)).collect();
                GpHyperparams::new(&ell, rng.gen_range(0.5..1.5), rng.gen_range(0.01..0.05)).unwrap()
            })
            .collect();
        GpModel::new(x, y, hps).unwrap()
    }

    fn flat(p: &UncertainPrediction) -> DVector<f64> {
        let mut v = p.delta_mean.as_slice().to_vec();
        v.extend_from_slice(p.delta_cov.as_slice());
        v.extend_from_slice(p.input_delta_cross_cov.as_slice());
        DVector::from_vec(v)
    }

    fn check_gradients(method: InferenceMethod, uncertainty: ModelUncertainty) {
        for seed in 0..3 {
            let model = random_model(seed, 15, 3, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let s = random_spd(&mut rng, 3, 0.3);
            let m = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let input = GaussianBelief::new(m.clone(), s.clone()).unwrap();
            let g = prediction_gradients(&model, &input, method, uncertainty).unwrap();
            let num = fd_jacobian(
                |v| {
                    let (m, s) = unpack_moments(v, 3);
                    let map = gp_moment_map(&model, &m, &s, method, uncertainty, false).unwrap();
                    flat(&to_prediction(&map, &s))
                },
                &pack_moments(&m, &s),
                1e-4,
            );
            let e = 2;
            let blocks = [
                (0, e, &g.d_mean_d_input_mean, &g.d_mean_d_input_cov),
                (e, e * e, &g.d_cov_d_input_mean, &g.d_cov_d_input_cov),
                (e + e * e, 3 * e, &g.d_crosscov_d_input_mean, &g.d_crosscov_d_input_cov),
            ];
            for (r0, rows, bm, bs) in blocks {
                let nm = num.view((r0, 0), (rows, 3)).into_owned();
                let ns = num.view((r0, 3), (rows, 6)).into_owned();
                assert!(max_rel_err(bm, &nm, 1e-6) < 1e-6, "{method:?} mean block at row {r0}");
                assert!(max_rel_err(&packed_cov_columns(bs, 3), &ns, 1e-6) < 1e-6, "{method:?} cov block at row {r0}");
            }
        }
    }

    #[test]
    fn moment_matching_gradients_match_finite_differences() {
        check_gradients(InferenceMethod::MomentMatch, ModelUncertainty::Bayesian);
        check_gradients(InferenceMethod::MomentMatch, ModelUncertainty::DeterministicMean);
    }

    #[test]
    fn linearization_gradients_match_finite_differences() {
        check_gradients(InferenceMethod::Linearize, ModelUncertainty::Bayesian);
        check_gradients(InferenceMethod::Linearize, ModelUncertainty::DeterministicMean);
    }

    #[test]
    fn deterministic_input_reduces_to_point_prediction() {
        let model = random_model(3, 20, 3, 2);
        let m = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let input = GaussianBelief::deterministic(m.clone());
        let point = model.predict_point(&m).unwrap();
        for pred in [moment_match(&model, &input).unwrap(), linearize_predict(&model, &input).unwrap()] {
            for a in 0..2 {
                let noise = model.outputs()[a].hyperparams().noise_var();
                assert!((pred.delta_mean[a] - point[a].mean).abs() < 1e-10);
                assert!((pred.delta_cov[(a, a)] - point[a].var - noise).abs() < 1e-10);
            }
            assert!(pred.delta_cov[(0, 1)].abs() < 1e-10);
            assert!(pred.input_delta_cross_cov.amax() == 0.0);
        }
    }

    #[test]
    fn zero_targets_give_vanishing_mean_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(10, 2, |_, _| rng.gen_range(-1.0..1.0));
        let hp = GpHyperparams::new(&[1.0, 1.0], 1.0, 0.1).unwrap();
        let model = GpModel::new(x, DMatrix::zeros(10, 1), vec![hp]).unwrap();
        let input = GaussianBelief::new(DVector::from_vec(vec![0.1, 0.2]), random_spd(&mut rng, 2, 0.2)).unwrap();
        let g = moment_match_gradients(&model, &input).unwrap();
        assert_eq!(g.d_mean_d_input_mean.amax(), 0.0);
        assert_eq!(g.d_mean_d_input_cov.amax(), 0.0);
    }

    #[test]
    fn cov_derivatives_are_symmetric() {
        let model = random_model(4, 12, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = GaussianBelief::new(DVector::from_vec(vec![0.1, 0.0, -0.3]), random_spd(&mut rng, 3, 0.4)).unwrap();
        let g = moment_match_gradients(&model, &input).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                assert_eq!(g.mean_wrt_cov(1, p, q), g.mean_wrt_cov(1, q, p));
                assert_eq!(g.cov_wrt_cov(0, 1, p, q), g.cov_wrt_cov(0, 1, q, p));
                assert_eq!(g.crosscov_wrt_cov(2, 0, p, q), g.crosscov_wrt_cov(2, 0, q, p));
            }
        }
    }
}
