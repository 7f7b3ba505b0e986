//! Saturating cost `c(y) = 1 − exp(−½ (y − y*)ᵀ W (y − y*))` and its Gaussian expectation.
//!
//! For `y ~ N(μ, Σ)` with `e = μ − y*` and `S = W (I + ΣW)⁻¹`,
//! `E[c] = 1 − L` with `L = |I + ΣW|^{-1/2} exp(−½ eᵀ S e)`. The second moment follows from
//! the same algebra with doubled precision: `E[c²] = 1 − 2L(W) + L(2W)`.
//!
//! The cost lives in a small cost space (the pendulum tip position); the state is mapped there
//! by a trigonometric feature map whose Gaussian moments are exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureMap};
use crate::gaussian::GaussianBelief;
use crate::linalg;

/// Above this condition number `I + ΣW` is treated as singular.
const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub target: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub sigma_c: f64,
    #[serde(default)]
    pub ucb_kappa: f64,
}

impl CostConfig {
    /// Penalize the full cost-space distance with width `sigma_c`.
    pub fn new(target: DVector<f64>, sigma_c: f64) -> Result<Self> {
        let n = target.len();
        Self::with_selector(target, &vec![true; n], sigma_c)
    }

    /// Precision `diag(selected)/σ_c²`.
    pub fn with_selector(target: DVector<f64>, selected: &[bool], sigma_c: f64) -> Result<Self> {
        if !(sigma_c.is_finite() && sigma_c > 0.0) {
            return Err(Error::Domain(format!("cost width must be positive, got {sigma_c}")));
        }
        if selected.len() != target.len() {
            return Err(Error::dim("selector length differs from target length"));
        }
        let w = 1.0 / (sigma_c * sigma_c);
        let precision = DMatrix::from_fn(target.len(), target.len(), |i, j| if i == j && selected[i] { w } else { 0.0 });
        Ok(CostConfig { target, precision, sigma_c, ucb_kappa: 0.0 })
    }

    pub fn with_ucb(mut self, kappa: f64) -> Self {
        self.ucb_kappa = kappa;
        self
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.target.len();
        if self.precision.shape() != (n, n) {
            return Err(Error::dim("cost precision must be square with the target dimension"));
        }
        if !(self.sigma_c.is_finite() && self.sigma_c > 0.0) {
            return Err(Error::Domain("cost width must be positive".into()));
        }
        if !self.ucb_kappa.is_finite() {
            return Err(Error::Domain("ucb_kappa must be finite".into()));
        }
        linalg::check_psd(&self.precision)
    }
}

/// Pointwise cost.
pub fn immediate_cost(cfg: &CostConfig, y: &DVector<f64>) -> f64 {
    let e = y - &cfg.target;
    1.0 - (-0.5 * e.dot(&(&cfg.precision * &e))).exp()
}

/// A scalar of the belief together with its gradients with respect to the mean and covariance.
#[derive(Clone, Debug)]
pub struct CostValue {
    pub value: f64,
    pub d_mean: DVector<f64>,
    pub d_cov: DMatrix<f64>,
}

/// `L(W) = E[exp(−½ eᵀWe)]` with gradients.
fn gaussian_overlap(w: &DMatrix<f64>, target: &DVector<f64>, belief: &GaussianBelief) -> Result<CostValue> {
    let n = target.len();
    if belief.dim() != n {
        return Err(Error::dim(format!("belief of dimension {} for a cost space of dimension {n}", belief.dim())));
    }
    let b = DMatrix::identity(n, n) + belief.cov() * w;
    let svd = b.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(Error::Singular { context: "I + ΣW in expected cost", condition: if smin > 0.0 { smax / smin } else { f64::INFINITY } });
    }
    let lu = b.lu();
    let det = lu.determinant();
    let binv = lu.try_inverse().ok_or(Error::Singular { context: "I + ΣW in expected cost", condition: f64::INFINITY })?;
    let s1 = linalg::symmetrized(w * binv);
    let e = belief.mean() - target;
    let se = &s1 * &e;
    let l = det.powf(-0.5) * (-0.5 * e.dot(&se)).exp();
    let d_mean = -l * &se;
    let d_cov = linalg::symmetrized((&se * se.transpose() - &s1) * (0.5 * l));
    Ok(CostValue { value: l, d_mean, d_cov })
}

/// `E[c]` and its gradients.
pub fn expected_cost(cfg: &CostConfig, belief: &GaussianBelief) -> Result<CostValue> {
    let l = gaussian_overlap(&cfg.precision, &cfg.target, belief)?;
    Ok(CostValue { value: (1.0 - l.value).clamp(0.0, 1.0), d_mean: -l.d_mean, d_cov: -l.d_cov })
}

/// Standard deviation of the cost with gradients; the gradient is zero where the variance
/// vanishes.
pub fn cost_std_with_grad(cfg: &CostConfig, belief: &GaussianBelief) -> Result<CostValue> {
    let l1 = gaussian_overlap(&cfg.precision, &cfg.target, belief)?;
    let l2 = gaussian_overlap(&(&cfg.precision * 2.0), &cfg.target, belief)?;
    let var = l2.value - l1.value * l1.value;
    let n = cfg.dim();
    if var <= 1e-300 {
        return Ok(CostValue { value: 0.0, d_mean: DVector::zeros(n), d_cov: DMatrix::zeros(n, n) });
    }
    let sd = var.sqrt();
    let k = 0.5 / sd;
    Ok(CostValue {
        value: sd,
        d_mean: (&l2.d_mean - &l1.d_mean * (2.0 * l1.value)) * k,
        d_cov: (&l2.d_cov - &l1.d_cov * (2.0 * l1.value)) * k,
    })
}

pub fn cost_std(cfg: &CostConfig, belief: &GaussianBelief) -> Result<f64> {
    Ok(cost_std_with_grad(cfg, belief)?.value)
}

/// `E[c] + κ·std[c]`, the per-step term of the long-term cost.
pub fn step_cost(cfg: &CostConfig, belief: &GaussianBelief) -> Result<CostValue> {
    let mut c = expected_cost(cfg, belief)?;
    if cfg.ucb_kappa != 0.0 {
        let sd = cost_std_with_grad(cfg, belief)?;
        c.value += cfg.ucb_kappa * sd.value;
        c.d_mean += sd.d_mean * cfg.ucb_kappa;
        c.d_cov += sd.d_cov * cfg.ucb_kappa;
    }
    Ok(c)
}

/// Cart-pole cart plus pole-tip position `(x + l sin θ, −l cos θ)` for state `[x, ẋ, θ, θ̇]`
/// with `θ = 0` hanging down.
pub fn cartpole_tip_map(pole_length: f64) -> FeatureMap {
    FeatureMap::new(
        4,
        vec![
            Feature::coordinate(4, 0).with_sine(2, 1.0, pole_length),
            Feature::cosine(4, 2, 1.0, -pole_length),
        ],
    )
}

/// Outer-tip position `(l1 sin θ1 + l2 sin θ2, l1 cos θ1 + l2 cos θ2)` for state
/// `[θ1, θ2, θ̇1, θ̇2]` with absolute angles measured from upright.
pub fn double_pendulum_tip_map(l1: f64, l2: f64) -> FeatureMap {
    FeatureMap::new(
        4,
        vec![
            Feature::sine(4, 0, 1.0, l1).with_sine(1, 1.0, l2),
            Feature::cosine(4, 0, 1.0, l1).with_cosine(1, 1.0, l2),
        ],
    )
}

/// Gaussian approximation of the cost-space belief (exact first two moments).
pub fn cost_space_map(map: &FeatureMap, state: &GaussianBelief) -> Result<GaussianBelief> {
    if state.dim() != map.input_dim() {
        return Err(Error::dim("state belief dimension differs from the cost-space map input"));
    }
    let mm = map.moments(state.mean(), state.cov(), false);
    GaussianBelief::new(mm.mean, linalg::symmetrized(mm.cov))
}

/// A cost configuration together with the map from state to cost space.
#[derive(Clone, Debug)]
pub struct StateCost {
    pub config: CostConfig,
    pub space: FeatureMap,
}

impl StateCost {
    pub fn new(config: CostConfig, space: FeatureMap) -> Result<Self> {
        config.validate()?;
        if space.output_dim() != config.dim() {
            return Err(Error::dim("cost-space map output differs from the cost target dimension"));
        }
        Ok(StateCost { config, space })
    }

    pub fn state_dim(&self) -> usize {
        self.space.input_dim()
    }

    pub fn at_state(&self, x: &DVector<f64>) -> f64 {
        immediate_cost(&self.config, &self.space.evaluate(x))
    }

    /// Distance of the cost-space point from the target.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        (self.space.evaluate(x) - &self.config.target).norm()
    }

    pub fn expected(&self, state: &GaussianBelief) -> Result<f64> {
        Ok(step_cost(&self.config, &cost_space_map(&self.space, state)?)?.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{fd_jacobian, max_rel_err, pack_moments, random_spd, unpack_moments, MvnSampler};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg2() -> CostConfig {
        CostConfig::new(DVector::from_vec(vec![0.0, 0.5]), 0.25).unwrap()
    }

    #[test]
    fn at_target_is_zero() {
        let cfg = cfg2();
        let c = expected_cost(&cfg, &GaussianBelief::deterministic(cfg.target.clone())).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.d_mean.amax(), 0.0);
    }

    #[test]
    fn deterministic_matches_pointwise() {
        let cfg = cfg2();
        let y = DVector::from_vec(vec![0.1, 0.2]);
        let c = expected_cost(&cfg, &GaussianBelief::deterministic(y.clone())).unwrap();
        assert!((c.value - immediate_cost(&cfg, &y)).abs() < 1e-15);
        assert_eq!(cost_std(&cfg, &GaussianBelief::deterministic(y)).unwrap(), 0.0);
    }

    fn packed_grad(c: &CostValue) -> DMatrix<f64> {
        let n = c.d_mean.len();
        let mut v = c.d_mean.as_slice().to_vec();
        for j in 0..n {
            for i in 0..=j {
                v.push(if i == j { c.d_cov[(i, i)] } else { c.d_cov[(i, j)] + c.d_cov[(j, i)] });
            }
        }
        DMatrix::from_row_slice(1, v.len(), &v)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..5 {
            let mut cfg = cfg2();
            if trial % 2 == 1 {
                cfg.ucb_kappa = 0.7;
            }
            let m = DVector::from_fn(2, |_, _| rng.gen_range(-0.4..0.6));
            let s = random_spd(&mut rng, 2, 0.05);
            let b = GaussianBelief::new(m.clone(), s.clone()).unwrap();
            for f in [expected_cost as fn(&CostConfig, &GaussianBelief) -> Result<CostValue>, cost_std_with_grad, step_cost] {
                let an = packed_grad(&f(&cfg, &b).unwrap());
                let num = fd_jacobian(
                    |v| {
                        let (m, s) = unpack_moments(v, 2);
                        DVector::from_element(1, f(&cfg, &GaussianBelief::new(m, s).unwrap()).unwrap().value)
                    },
                    &pack_moments(&m, &s),
                    1e-5,
                );
                let err = max_rel_err(&an, &num, 1e-6);
                assert!(err < 1e-5, "trial {trial}: {err}");
            }
        }
    }

    #[test]
    fn monte_carlo_mean_and_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = cfg2();
        let m = DVector::from_vec(vec![0.2, 0.3]);
        let s = random_spd(&mut rng, 2, 0.04);
        let b = GaussianBelief::new(m.clone(), s.clone()).unwrap();
        let sampler = MvnSampler::new(m, &s);
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let c = immediate_cost(&cfg, &sampler.sample(&mut rng));
            s1 += c;
            s2 += c * c;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((expected_cost(&cfg, &b).unwrap().value - mean).abs() < 4.0 * se);
        let sd = cost_std(&cfg, &b).unwrap();
        assert!((sd - var.sqrt()).abs() < 0.01 * sd);
    }

    #[test]
    fn bounded_and_saturating() {
        let cfg = cfg2();
        let far = GaussianBelief::diagonal(DVector::from_vec(vec![30.0, 0.0]), &[4.0, 4.0]).unwrap();
        let c = expected_cost(&cfg, &far).unwrap().value;
        assert!(c <= 1.0 && c > 1.0 - 1e-12);
        assert!(cost_std(&cfg, &far).unwrap() < 1e-6);
    }

    #[test]
    fn exploration_and_exploitation_orderings() {
        let cfg = CostConfig::new(DVector::zeros(1), 0.25).unwrap();
        let vars: Vec<f64> = (0..40).map(|i| 1e-4 * 1.4f64.powi(i)).collect();
        let cost_at = |mu: f64, v: f64| expected_cost(&cfg, &GaussianBelief::diagonal(DVector::from_element(1, mu), &[v]).unwrap()).unwrap().value;
        for w in vars.windows(2) {
            // at the target certainty is preferred
            assert!(cost_at(0.0, w[0]) <= cost_at(0.0, w[1]));
            // far from the target uncertainty lowers the expected cost while v ≤ μ² − σ_c²
            for mu in [0.75, 1.0, 2.0] {
                if w[1] <= mu * mu - 0.0625 {
                    assert!(cost_at(mu, w[1]) <= cost_at(mu, w[0]), "mu {mu} v {}", w[1]);
                }
            }
        }
    }

    #[test]
    fn tip_geometry() {
        let cp = StateCost::new(CostConfig::new(DVector::from_vec(vec![0.0, 0.5]), 0.25).unwrap(), cartpole_tip_map(0.5)).unwrap();
        assert!((cp.distance(&DVector::zeros(4)) - 1.0).abs() < 1e-15);
        let up = DVector::from_vec(vec![0.0, 0.0, std::f64::consts::PI, 0.0]);
        assert!(cp.distance(&up) < 1e-15);
        let dp = StateCost::new(CostConfig::new(DVector::from_vec(vec![0.0, 2.0]), 0.5).unwrap(), double_pendulum_tip_map(1.0, 1.0)).unwrap();
        assert!(dp.distance(&DVector::zeros(4)) < 1e-15);
        assert_eq!(dp.at_state(&DVector::zeros(4)), 0.0);
    }

    #[test]
    fn singular_rejected() {
        let mut cfg = cfg2();
        cfg.precision = DMatrix::from_row_slice(2, 2, &[1e20, 0.0, 0.0, 1.0]);
        let b = GaussianBelief::diagonal(DVector::zeros(2), &[1.0, 1.0]).unwrap();
        assert!(matches!(expected_cost(&cfg, &b), Err(Error::Singular { .. })));
    }
}
