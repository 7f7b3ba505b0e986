//! Bounded feedback policies.
//!
//! A policy maps the state through an input augmentation (each angle replaced by its sine and
//! cosine), a preliminary controller (affine, or an RBF network equivalent to the posterior
//! mean of a GP with unit signal variance and noise variance 0.01), and the squash
//! `u = u_max·(9/8·sin z + 1/8·sin 3z)`, which keeps every control inside `[−u_max, u_max]`.
//!
//! For a Gaussian state the control distribution is approximated by a Gaussian with exact first
//! two moments. The state-control covariance is composed stage by stage: with premultiplied
//! cross terms `C_1` (augmentation), `C_2` (preliminary controller) and `C_3` (squash),
//! `cov[x, u] = Σ_x C_1 C_2 C_3`. The preliminary-to-control covariance `cov[π̃, u]` is exact.
//!
//! Parameter vector layout. Linear: `[vec(A), b]` with `A` of size `F×D_in`. RBF:
//! `[vec(centers), vec(log_length_scales), vec(targets)]` with shapes `N×D_in`, `F×D_in` and
//! `N×F`. All `vec` are column-major.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{expansion_moments, param_partials, ExpansionOutput};
use crate::features::{Feature, FeatureMap};
use crate::gaussian::GaussianBelief;
use crate::gp::se_cross;
use crate::linalg;
use crate::tangent::{MapJacobian, MomentMap, Tangent};
use crate::verify::MvnSampler;

/// Noise variance of the RBF network; with unit signal variance this fixes the
/// signal-to-noise ratio at 10.
pub const RBF_NOISE_VAR: f64 = 0.01;

/// `9/8·sin z + 1/8·sin 3z`
pub fn squash(z: f64) -> f64 {
    1.125 * z.sin() + 0.125 * (3.0 * z).sin()
}

/// Which state coordinates are angles; the policy sees the remaining coordinates followed by
/// `(sin, cos)` of every angle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAugmentation {
    pub state_dim: usize,
    pub angle_dims: Vec<usize>,
}

impl InputAugmentation {
    pub fn new(state_dim: usize, angle_dims: Vec<usize>) -> Result<Self> {
        if angle_dims.iter().any(|&i| i >= state_dim) {
            return Err(Error::Config("angle index beyond state dimension".into()));
        }
        Ok(InputAugmentation { state_dim, angle_dims })
    }

    pub fn identity(state_dim: usize) -> Self {
        InputAugmentation { state_dim, angle_dims: Vec::new() }
    }

    pub fn output_dim(&self) -> usize {
        self.state_dim + self.angle_dims.len()
    }

    pub fn feature_map(&self) -> FeatureMap {
        let keep: Vec<usize> = (0..self.state_dim).filter(|i| !self.angle_dims.contains(i)).collect();
        FeatureMap::angle_augmentation(self.state_dim, &keep, &self.angle_dims)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    Linear { a: DMatrix<f64>, b: DVector<f64> },
    Rbf { centers: DMatrix<f64>, log_length_scales: DMatrix<f64>, targets: DMatrix<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    kind: PolicyKind,
    u_max: DVector<f64>,
}

impl PolicyParams {
    pub fn linear(a: DMatrix<f64>, b: DVector<f64>, u_max: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() || b.len() != u_max.len() {
            return Err(Error::dim("linear policy: A rows, b and u_max must agree"));
        }
        Self::checked(PolicyKind::Linear { a, b }, u_max)
    }

    pub fn rbf(centers: DMatrix<f64>, log_length_scales: DMatrix<f64>, targets: DMatrix<f64>, u_max: DVector<f64>) -> Result<Self> {
        let (n, d) = centers.shape();
        let f = u_max.len();
        if log_length_scales.shape() != (f, d) || targets.shape() != (n, f) {
            return Err(Error::dim(format!(
                "rbf policy with {n} centers in {d} dims and {f} controls needs {f}×{d} length-scales and {n}×{f} targets"
            )));
        }
        if n == 0 {
            return Err(Error::Domain("rbf policy needs at least one center".into()));
        }
        Self::checked(PolicyKind::Rbf { centers, log_length_scales, targets }, u_max)
    }

    fn checked(kind: PolicyKind, u_max: DVector<f64>) -> Result<Self> {
        if u_max.iter().any(|&u| !(u.is_finite() && u > 0.0)) {
            return Err(Error::Domain("u_max must be positive and finite".into()));
        }
        let p = PolicyParams { kind, u_max };
        linalg::check_finite_vector(&p.to_vector(), "policy parameters")?;
        Ok(p)
    }

    /// `N·D_in + F·D_in + N·F`
    pub fn rbf_param_count(n_basis: usize, input_dim: usize, controls: usize) -> usize {
        n_basis * input_dim + controls * input_dim + n_basis * controls
    }

    pub fn linear_param_count(input_dim: usize, controls: usize) -> usize {
        controls * (input_dim + 1)
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn u_max(&self) -> &DVector<f64> {
        &self.u_max
    }

    pub fn control_dim(&self) -> usize {
        self.u_max.len()
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            PolicyKind::Linear { a, .. } => a.ncols(),
            PolicyKind::Rbf { centers, .. } => centers.ncols(),
        }
    }

    pub fn num_params(&self) -> usize {
        match &self.kind {
            PolicyKind::Linear { a, .. } => Self::linear_param_count(a.ncols(), a.nrows()),
            PolicyKind::Rbf { centers, .. } => Self::rbf_param_count(centers.nrows(), centers.ncols(), self.control_dim()),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        match &self.kind {
            PolicyKind::Linear { a, b } => {
                v.extend_from_slice(a.as_slice());
                v.extend_from_slice(b.as_slice());
            }
            PolicyKind::Rbf { centers, log_length_scales, targets } => {
                v.extend_from_slice(centers.as_slice());
                v.extend_from_slice(log_length_scales.as_slice());
                v.extend_from_slice(targets.as_slice());
            }
        }
        DVector::from_vec(v)
    }

    /// Same shapes and limits with parameters taken from `theta`.
    pub fn with_vector(&self, theta: &DVector<f64>) -> Result<Self> {
        if theta.len() != self.num_params() {
            return Err(Error::dim(format!("{} parameters for a policy with {}", theta.len(), self.num_params())));
        }
        let t = theta.as_slice();
        let kind = match &self.kind {
            PolicyKind::Linear { a, .. } => {
                let (f, d) = a.shape();
                PolicyKind::Linear {
                    a: DMatrix::from_column_slice(f, d, &t[..f * d]),
                    b: DVector::from_column_slice(&t[f * d..]),
                }
            }
            PolicyKind::Rbf { centers, .. } => {
                let (n, d) = centers.shape();
                let f = self.control_dim();
                let (c1, c2) = (n * d, n * d + f * d);
                PolicyKind::Rbf {
                    centers: DMatrix::from_column_slice(n, d, &t[..c1]),
                    log_length_scales: DMatrix::from_column_slice(f, d, &t[c1..c2]),
                    targets: DMatrix::from_column_slice(n, f, &t[c2..]),
                }
            }
        };
        Self::checked(kind, self.u_max.clone())
    }

    /// Per-output kernel weights `α_a = (K_a + 0.01 I)⁻¹ t_a` with their factorizations.
    fn rbf_weights(&self) -> Result<Vec<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)>> {
        let PolicyKind::Rbf { centers, log_length_scales, targets } = &self.kind else {
            return Ok(Vec::new());
        };
        (0..self.control_dim())
            .map(|a| {
                let inv_ell = log_length_scales.row(a).transpose().map(|l| (-l).exp());
                let k = se_cross(centers, centers, &inv_ell, 1.0);
                let mut kn = k.clone();
                for i in 0..kn.nrows() {
                    kn[(i, i)] += RBF_NOISE_VAR;
                }
                let ch = linalg::spd_cholesky(&kn, "policy kernel matrix")?;
                let alpha = ch.solve(&targets.column(a).into_owned());
                Ok((k, alpha, ch.inverse()))
            })
            .collect()
    }

    /// Preliminary (unsquashed) control at a deterministic policy input.
    pub fn prelim_point(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("policy input dimension"));
        }
        match &self.kind {
            PolicyKind::Linear { a, b } => Ok(a * input + b),
            PolicyKind::Rbf { centers, log_length_scales, .. } => {
                let q = DMatrix::from_row_slice(1, input.len(), input.as_slice());
                let weights = self.rbf_weights()?;
                Ok(DVector::from_fn(self.control_dim(), |a, _| {
                    let inv_ell = log_length_scales.row(a).transpose().map(|l| (-l).exp());
                    se_cross(centers, &q, &inv_ell, 1.0).column(0).dot(&weights[a].1)
                }))
            }
        }
    }

    /// Moments of the preliminary control in premultiplied form plus the Jacobian of
    /// `[mean; vec(cov); vec(cross)]` with respect to the parameters at fixed input moments.
    pub(crate) fn prelim_map(&self, m: &DVector<f64>, s: &DMatrix<f64>, with_jac: bool) -> Result<(MomentMap, Option<DMatrix<f64>>)> {
        let d = self.input_dim();
        if m.len() != d {
            return Err(Error::dim(format!("policy input of dimension {} for a policy expecting {d}", m.len())));
        }
        let f = self.control_dim();
        let nout = f + f * f + d * f;
        match &self.kind {
            PolicyKind::Linear { a, b } => {
                let mean = a * m + b;
                let sa = s * a.transpose();
                let cov = linalg::symmetrized(a * &sa);
                let cross = a.transpose();
                if !with_jac {
                    return Ok((MomentMap { mean, cov, cross, jac: None }, None));
                }
                let mut jac = MapJacobian::zeros(d, f);
                jac.mean_mean.copy_from(a);
                for g in 0..f {
                    for h in 0..f {
                        for q in 0..d {
                            for p in 0..d {
                                jac.cov_cov[(g + h * f, p + q * d)] = a[(g, p)] * a[(h, q)];
                            }
                        }
                    }
                }
                jac.symmetrize(d, f);
                let mut dt = DMatrix::zeros(nout, self.num_params());
                for g in 0..f {
                    for k in 0..d {
                        dt[(g, g + k * f)] = m[k];
                        for h in 0..f {
                            // cov_gh = Σ A_gk S_kl A_hl
                            dt[(f + g + h * f, g + k * f)] += sa[(k, h)];
                            dt[(f + h + g * f, g + k * f)] += sa[(k, h)];
                        }
                        dt[(f + f * f + k + g * d, g + k * f)] = 1.0;
                    }
                    dt[(g, f * d + g)] = 1.0;
                }
                Ok((MomentMap { mean, cov, cross, jac: Some(jac) }, Some(dt)))
            }
            PolicyKind::Rbf { centers, log_length_scales, .. } => {
                let weights = self.rbf_weights()?;
                let outs: Vec<ExpansionOutput> = (0..f)
                    .map(|a| ExpansionOutput {
                        log_ell: log_length_scales.row(a).transpose(),
                        sf2: 1.0,
                        beta: &weights[a].1,
                        inv_k: None,
                        noise: 0.0,
                    })
                    .collect();
                let exp = expansion_moments(centers, &outs, m, s, with_jac)?;
                if !with_jac {
                    return Ok((exp.map, None));
                }
                let pp = param_partials(centers, &outs, &exp);
                let n = centers.nrows();
                let mut dt = DMatrix::zeros(nout, self.num_params());
                let off_l = n * d;
                let off_t = n * d + f * d;
                dt.view_mut((0, 0), (nout, n * d)).copy_from(&pp.d_centers);
                for a in 0..f {
                    for k in 0..d {
                        dt.column_mut(off_l + a + k * f).copy_from(&pp.d_log_ell[a].column(k));
                    }
                    // chain through α_a = K̃⁻¹ t_a
                    let (k, alpha, kinv) = &weights[a];
                    let v = kinv * pp.d_beta[a].transpose(); // n × nout
                    dt.view_mut((0, off_t + a * n), (nout, n)).copy_from(&v.transpose());
                    let inv_ell2 = log_length_scales.row(a).transpose().map(|l| (-2.0 * l).exp());
                    // DA[l,k] = Σ_j K_lj (X_lk − X_jk)/ℓ_k² α_j ; EA[i,k] = Σ_j K_ij (X_ik − X_jk)²/ℓ_k² α_j
                    let mut da = DMatrix::<f64>::zeros(n, d);
                    let mut ea = DMatrix::<f64>::zeros(n, d);
                    for c in 0..d {
                        for j in 0..n {
                            for l in 0..n {
                                let diff = centers[(l, c)] - centers[(j, c)];
                                let kd = k[(l, j)] * diff * inv_ell2[c];
                                da[(l, c)] += kd * alpha[j];
                                ea[(l, c)] += kd * diff * alpha[j];
                            }
                        }
                    }
                    for o in 0..nout {
                        let vo = v.column(o);
                        for c in 0..d {
                            let mut dl = 0.0;
                            for l in 0..n {
                                let mut sv = 0.0;
                                for j in 0..n {
                                    sv += k[(l, j)] * (centers[(l, c)] - centers[(j, c)]) * vo[j];
                                }
                                let g = vo[l] * da[(l, c)] + alpha[l] * sv * inv_ell2[c];
                                dt[(o, l + c * n)] += g;
                                dl += vo[l] * ea[(l, c)];
                            }
                            dt[(o, off_l + a + c * f)] -= dl;
                        }
                    }
                }
                Ok((exp.map, Some(dt)))
            }
        }
    }
}

/// Premultiplied state-control moments as tangents over some upstream variables.
pub(crate) struct ControlTangents {
    pub mean: Tangent,
    pub cov: Tangent,
    /// `C` with `cov[x, u] = Σ_x C`.
    pub cross: Tangent,
}

#[derive(Clone, Debug)]
pub struct ControlJacobian {
    /// Rows enumerate `[u_mean; vec(u_cov); vec(state_control_cross_cov)]`.
    pub wrt_mean: DMatrix<f64>,
    pub wrt_cov: DMatrix<f64>,
    pub wrt_theta: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct ControlMoments {
    pub u_mean: DVector<f64>,
    pub u_cov: DMatrix<f64>,
    /// `cov[x, u]`, `D×F`.
    pub state_control_cross_cov: DMatrix<f64>,
    pub jac: Option<ControlJacobian>,
}

#[derive(Clone, Debug)]
pub struct PrelimMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `cov[policy input, π̃]`
    pub input_prelim_cross_cov: DMatrix<f64>,
    /// Rows `[mean; vec(cov); vec(cross)]`, columns the policy parameters.
    pub d_theta: DMatrix<f64>,
}

/// Feature map of the squash for every control dimension.
pub fn squash_map(u_max: &DVector<f64>) -> FeatureMap {
    let f = u_max.len();
    let features = (0..f)
        .map(|a| Feature::sine(f, a, 1.0, 1.125 * u_max[a]).with_sine(a, 3.0, 0.125 * u_max[a]))
        .collect();
    FeatureMap::new(f, features)
}

/// Exact moments of the preliminary control for a Gaussian policy input.
pub fn prelim_moments(params: &PolicyParams, input: &GaussianBelief) -> Result<PrelimMoments> {
    let (map, dt) = params.prelim_map(input.mean(), input.cov(), true)?;
    let s = input.cov();
    let (d, f) = (params.input_dim(), params.control_dim());
    let mut dt = dt.expect("jacobian requested");
    // rows of the premultiplied cross term become rows of S·C
    let base = f + f * f;
    for col in 0..dt.ncols() {
        let dc = DMatrix::from_fn(d, f, |k, a| dt[(base + k + a * d, col)]);
        let v = s * dc;
        for a in 0..f {
            for k in 0..d {
                dt[(base + k + a * d, col)] = v[(k, a)];
            }
        }
    }
    Ok(PrelimMoments { mean: map.mean, cov: map.cov, input_prelim_cross_cov: s * map.cross, d_theta: dt })
}

/// Moments of `u = u_max·squash(z)` for `z ~ N(prelim)`, and `cov[x, u]` from the given
/// `cov[x, z]`.
pub fn squash_moments(prelim: &GaussianBelief, input_prelim_cross_cov: &DMatrix<f64>, u_max: &DVector<f64>) -> Result<ControlMoments> {
    if prelim.dim() != u_max.len() || input_prelim_cross_cov.ncols() != u_max.len() {
        return Err(Error::dim("squash: prelim dimension, cross-covariance and u_max disagree"));
    }
    let map = squash_map(u_max).moments(prelim.mean(), prelim.cov(), false);
    Ok(ControlMoments {
        u_mean: map.mean,
        u_cov: linalg::symmetrized(map.cov),
        state_control_cross_cov: input_prelim_cross_cov * map.cross,
        jac: None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    params: PolicyParams,
    augmentation: InputAugmentation,
}

const FORMAT_TAG: &str = "pilco-policy";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    variant: String,
    state_dim: usize,
    angle_dims: Vec<usize>,
    u_max: Vec<f64>,
    input_dim: usize,
    n_basis: usize,
    params: Vec<f64>,
}

impl Policy {
    pub fn new(params: PolicyParams, augmentation: InputAugmentation) -> Result<Self> {
        if params.input_dim() != augmentation.output_dim() {
            return Err(Error::dim(format!(
                "policy expects {} inputs but the augmentation produces {}",
                params.input_dim(),
                augmentation.output_dim()
            )));
        }
        Ok(Policy { params, augmentation })
    }

    /// Linear policy with parameters drawn from `N(0, I)`.
    pub fn random_linear<R: Rng>(augmentation: InputAugmentation, u_max: DVector<f64>, rng: &mut R) -> Result<Self> {
        let (f, d) = (u_max.len(), augmentation.output_dim());
        let a = DMatrix::from_fn(f, d, |_, _| rng.sample(StandardNormal));
        let b = DVector::from_fn(f, |_, _| rng.sample(StandardNormal));
        Self::new(PolicyParams::linear(a, b, u_max)?, augmentation)
    }

    /// RBF policy with centers drawn from the initial state distribution with doubled standard
    /// deviation, unit length-scales and targets from `N(0, (target_scale·u_max)²)`.
    pub fn random_rbf<R: Rng>(
        augmentation: InputAugmentation,
        n_basis: usize,
        u_max: DVector<f64>,
        init: &GaussianBelief,
        target_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if init.dim() != augmentation.state_dim {
            return Err(Error::dim("initial belief dimension differs from the state dimension"));
        }
        let sampler = MvnSampler::new(init.mean().clone(), &(init.cov() * 4.0));
        let fmap = augmentation.feature_map();
        let d = augmentation.output_dim();
        let f = u_max.len();
        let mut centers = DMatrix::zeros(n_basis, d);
        for i in 0..n_basis {
            let x = sampler.sample(rng);
            centers.row_mut(i).copy_from(&fmap.evaluate(&x).transpose());
        }
        let targets = DMatrix::from_fn(n_basis, f, |_, a| target_scale * u_max[a] * rng.sample::<f64, _>(StandardNormal));
        let params = PolicyParams::rbf(centers, DMatrix::zeros(f, d), targets, u_max)?;
        Self::new(params, augmentation)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn augmentation(&self) -> &InputAugmentation {
        &self.augmentation
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn theta(&self) -> DVector<f64> {
        self.params.to_vector()
    }

    pub fn with_theta(&self, theta: &DVector<f64>) -> Result<Self> {
        Ok(Policy { params: self.params.with_vector(theta)?, augmentation: self.augmentation.clone() })
    }

    pub fn state_dim(&self) -> usize {
        self.augmentation.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.params.control_dim()
    }

    /// Control applied at a known state.
    pub fn evaluate(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        let z = self.params.prelim_point(&self.augmentation.feature_map().evaluate(state))?;
        Ok(DVector::from_fn(z.len(), |a, _| self.params.u_max[a] * squash(z[a])))
    }

    /// Control moments as tangents; the parameter Jacobian is placed at column `theta_offset`.
    /// Tangents without variables skip all derivative work.
    pub(crate) fn control_tangents(&self, m: &Tangent, s: &Tangent, theta_offset: usize) -> Result<ControlTangents> {
        let f = self.control_dim();
        let d = self.params.input_dim();
        let with_jac = m.nvars() > 0;
        let aug = self.augmentation.feature_map().moments(&m.vector(), &s.value, with_jac);
        let p = aug.push(m, s);
        let (pre, dt) = self.params.prelim_map(&p.mean.vector(), &p.cov.value, with_jac)?;
        let mut z = pre.push(&p.mean, &p.cov);
        if let Some(dt) = dt {
            z.mean.add_direct(&dt.rows(0, f).into_owned(), theta_offset);
            z.cov.add_direct(&dt.rows(f, f * f).into_owned(), theta_offset);
            z.cross.add_direct(&dt.rows(f + f * f, d * f).into_owned(), theta_offset);
        }
        let sq = squash_map(&self.params.u_max).moments(&z.mean.vector(), &z.cov.value, with_jac);
        let mut u = sq.push(&z.mean, &z.cov);
        u.cov.symmetrize();
        let cross = p.cross.matmul(&z.cross).matmul(&u.cross);
        Ok(ControlTangents { mean: u.mean, cov: u.cov, cross })
    }

    /// Control distribution for a Gaussian state, optionally with derivatives with respect
    /// to the state moments and the parameters.
    pub fn control_moments(&self, state: &GaussianBelief, with_jac: bool) -> Result<ControlMoments> {
        let d = self.state_dim();
        if state.dim() != d {
            return Err(Error::dim("state belief dimension differs from the policy state dimension"));
        }
        if !with_jac {
            let aug = self.augmentation.feature_map().moments(state.mean(), state.cov(), false);
            let (pre, _) = self.params.prelim_map(&aug.mean, &aug.cov, false)?;
            let sq = squash_map(&self.params.u_max).moments(&pre.mean, &pre.cov, false);
            let c = &aug.cross * &pre.cross * &sq.cross;
            return Ok(ControlMoments {
                u_mean: sq.mean,
                u_cov: linalg::symmetrized(sq.cov),
                state_control_cross_cov: state.cov() * c,
                jac: None,
            });
        }
        let np = self.num_params();
        let nv = d + d * d + np;
        let m = Tangent::seed(DMatrix::from_column_slice(d, 1, state.mean().as_slice()), nv, 0);
        let s = Tangent::seed(state.cov().clone(), nv, d);
        let ct = self.control_tangents(&m, &s, d + d * d)?;
        let cross = s.matmul(&ct.cross);
        let f = self.control_dim();
        let mut rows = DMatrix::zeros(f + f * f + d * f, nv);
        rows.rows_mut(0, f).copy_from(&ct.mean.jac);
        rows.rows_mut(f, f * f).copy_from(&ct.cov.jac);
        rows.rows_mut(f + f * f, d * f).copy_from(&cross.jac);
        Ok(ControlMoments {
            u_mean: ct.mean.vector(),
            u_cov: ct.cov.value.clone(),
            state_control_cross_cov: cross.value,
            jac: Some(ControlJacobian {
                wrt_mean: rows.columns(0, d).into_owned(),
                wrt_cov: rows.columns(d, d * d).into_owned(),
                wrt_theta: rows.columns(d + d * d, np).into_owned(),
            }),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let (variant, n_basis) = match self.params.kind() {
            PolicyKind::Linear { .. } => ("linear", 0),
            PolicyKind::Rbf { centers, .. } => ("rbf", centers.nrows()),
        };
        let file = PolicyFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            variant: variant.into(),
            state_dim: self.augmentation.state_dim,
            angle_dims: self.augmentation.angle_dims.clone(),
            u_max: self.params.u_max.as_slice().to_vec(),
            input_dim: self.params.input_dim(),
            n_basis,
            params: self.theta().as_slice().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported policy format {} v{}", file.format, file.version)));
        }
        let aug = InputAugmentation::new(file.state_dim, file.angle_dims)?;
        let u_max = DVector::from_vec(file.u_max);
        let (f, d) = (u_max.len(), file.input_dim);
        let template = match file.variant.as_str() {
            "linear" => PolicyParams::linear(DMatrix::zeros(f, d), DVector::zeros(f), u_max)?,
            "rbf" => PolicyParams::rbf(
                DMatrix::zeros(file.n_basis, d),
                DMatrix::zeros(f, d),
                DMatrix::zeros(file.n_basis, f),
                u_max,
            )?,
            other => return Err(Error::Format(format!("unknown policy variant {other}"))),
        };
        Policy::new(template.with_vector(&DVector::from_vec(file.params))?, aug)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{fd_jacobian, max_rel_err, pack_moments, packed_cov_columns, random_spd, unpack_moments};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rbf_policy(seed: u64, n: usize, state_dim: usize, angles: Vec<usize>, f: usize) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aug = InputAugmentation::new(state_dim, angles).unwrap();
        let init = GaussianBelief::diagonal(DVector::from_fn(state_dim, |i, _| 0.1 * i as f64), &vec![0.3; state_dim]).unwrap();
        let u_max = DVector::from_fn(f, |a, _| 2.0 + a as f64);
        let p = Policy::random_rbf(aug, n, u_max, &init, 0.3, &mut rng).unwrap();
        // perturb length-scales away from 1 so derivative checks see all terms
        let mut theta = p.theta();
        let d = p.params().input_dim();
        for k in 0..f * d {
            theta[n * d + k] = rng.gen_range(-0.3..0.3);
        }
        p.with_theta(&theta).unwrap()
    }

    #[test]
    fn squash_values() {
        assert_eq!(squash(0.0), 0.0);
        assert!((squash(std::f64::consts::FRAC_PI_2) - 1.0).abs() < 1e-15);
        let n = 200_000;
        let max = (0..=n)
            .map(|i| squash(-std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / n as f64))
            .fold(f64::MIN, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn paper_parameter_counts() {
        assert_eq!(PolicyParams::rbf_param_count(50, 5, 1), 305);
        assert_eq!(PolicyParams::rbf_param_count(100, 6, 2), 812);
        let cp = InputAugmentation::new(4, vec![2]).unwrap();
        let dp = InputAugmentation::new(4, vec![0, 1]).unwrap();
        assert_eq!(cp.output_dim(), 5);
        assert_eq!(dp.output_dim(), 6);
    }

    #[test]
    fn deterministic_rbf_matches_kernel_expansion() {
        let p = rbf_policy(1, 8, 3, vec![1], 2);
        let x = DVector::from_vec(vec![0.2, -0.7, 0.4]);
        let aug = p.augmentation().feature_map().evaluate(&x);
        let (map, _) = p.params().prelim_map(&aug, &DMatrix::zeros(4, 4), false).unwrap();
        let point = p.params().prelim_point(&aug).unwrap();
        assert!((map.mean - point).amax() < 1e-12);
        assert!(map.cov.amax() < 1e-12);
    }

    #[test]
    fn linear_prelim_degenerates() {
        let a = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let params = PolicyParams::linear(a, DVector::from_element(1, 0.2), DVector::from_element(1, 3.0)).unwrap();
        let input = GaussianBelief::deterministic(DVector::from_vec(vec![1.0, 2.0]));
        let pm = prelim_moments(&params, &input).unwrap();
        assert!((pm.mean[0] - (0.5 - 2.0 + 0.2)).abs() < 1e-15);
        assert_eq!(pm.cov[(0, 0)], 0.0);
    }

    #[test]
    fn squash_symmetry_and_zero() {
        let u_max = DVector::from_element(1, 10.0);
        let zero = GaussianBelief::deterministic(DVector::zeros(1));
        let c = squash_moments(&zero, &DMatrix::zeros(1, 1), &u_max).unwrap();
        assert_eq!(c.u_mean[0], 0.0);
        assert_eq!(c.u_cov[(0, 0)], 0.0);
        for var in [0.1, 1.0, 7.0] {
            let z = GaussianBelief::diagonal(DVector::zeros(1), &[var]).unwrap();
            assert!(squash_moments(&z, &DMatrix::zeros(1, 1), &u_max).unwrap().u_mean[0].abs() < 1e-15);
        }
    }

    #[test]
    fn zero_u_max_rejected() {
        let r = PolicyParams::linear(DMatrix::zeros(1, 2), DVector::zeros(1), DVector::zeros(1));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    fn flat(c: &ControlMoments) -> DVector<f64> {
        let mut v = c.u_mean.as_slice().to_vec();
        v.extend_from_slice(c.u_cov.as_slice());
        v.extend_from_slice(c.state_control_cross_cov.as_slice());
        DVector::from_vec(v)
    }

    fn check_control_gradients(p: &Policy, seed: u64) {
        let d = p.state_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_spd(&mut rng, d, 0.3);
        let m = DVector::from_fn(d, |_, _| rng.gen_range(-0.5..0.5));
        let belief = GaussianBelief::new(m.clone(), s.clone()).unwrap();
        let c = p.control_moments(&belief, true).unwrap();
        let jac = c.jac.as_ref().unwrap();
        let num_theta = fd_jacobian(
            |t| flat(&p.with_theta(t).unwrap().control_moments(&belief, false).unwrap()),
            &p.theta(),
            1e-4,
        );
        let err = max_rel_err(&jac.wrt_theta, &num_theta, 1e-6);
        assert!(err < 1e-6, "theta: {err}");
        let num_in = fd_jacobian(
            |v| {
                let (m, s) = unpack_moments(v, d);
                flat(&p.control_moments(&GaussianBelief::new(m, s).unwrap(), false).unwrap())
            },
            &pack_moments(&m, &s),
            1e-4,
        );
        let e1 = max_rel_err(&jac.wrt_mean, &num_in.columns(0, d).into_owned(), 1e-6);
        let e2 = max_rel_err(&packed_cov_columns(&jac.wrt_cov, d), &num_in.columns(d, num_in.ncols() - d).into_owned(), 1e-6);
        assert!(e1 < 1e-6 && e2 < 1e-6, "input: {e1} {e2}");
    }

    #[test]
    fn rbf_gradients_match_finite_differences() {
        check_control_gradients(&rbf_policy(2, 6, 3, vec![2], 1), 3);
        check_control_gradients(&rbf_policy(4, 5, 4, vec![0, 1], 2), 5);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let aug = InputAugmentation::new(3, vec![1]).unwrap();
        let p = Policy::random_linear(aug, DVector::from_vec(vec![1.5, 4.0]), &mut rng).unwrap();
        let p = p.with_theta(&(p.theta() * 0.3)).unwrap();
        check_control_gradients(&p, 7);
    }

    #[test]
    fn far_center_has_no_gradient() {
        let p = rbf_policy(8, 4, 2, vec![], 1);
        let mut theta = p.theta();
        // move center 0 far away (> 10 length-scales)
        theta[0] = 50.0;
        theta[4] = 50.0;
        let p = p.with_theta(&theta).unwrap();
        let belief = GaussianBelief::diagonal(DVector::zeros(2), &[0.1, 0.1]).unwrap();
        let c = p.control_moments(&belief, true).unwrap();
        let j = &c.jac.unwrap().wrt_theta;
        assert!(j.column(0).amax() <= 1e-8 && j.column(4).amax() <= 1e-8);
    }

    #[test]
    fn json_roundtrip() {
        let p = rbf_policy(9, 5, 4, vec![2], 1);
        let back = Policy::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
