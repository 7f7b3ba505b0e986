//! Long-term predictions under a fixed policy and the analytic policy gradient.
//!
//! One step maps the state belief `N(m, S)` through the policy to a joint state-control
//! Gaussian, predicts the change `Δ` with the GP, and returns
//! `m' = m + μ_Δ`, `S' = S + Σ_Δ + cov[x, Δ] + cov[x, Δ]ᵀ`.
//! Derivatives are carried forward: every belief holds its Jacobian with respect to the
//! policy parameters, so `dJ/dθ` is assembled as the rollout proceeds.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{step_cost, StateCost};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::gp::GpModel;
use crate::inference::{gp_moment_map, InferenceMethod, ModelUncertainty};
use crate::linalg;
use crate::policy::Policy;
use crate::tangent::Tangent;

/// A rollout stops once the covariance trace exceeds this multiple of the initial trace.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Propagation {
    #[serde(default)]
    pub method: InferenceMethod,
    #[serde(default)]
    pub uncertainty: ModelUncertainty,
}

/// Everything a rollout needs besides the initial belief.
#[derive(Clone, Copy)]
pub struct Setup<'a> {
    pub model: &'a GpModel,
    pub policy: &'a Policy,
    pub cost: &'a StateCost,
    pub propagation: Propagation,
}

impl<'a> Setup<'a> {
    pub fn new(model: &'a GpModel, policy: &'a Policy, cost: &'a StateCost, propagation: Propagation) -> Result<Self> {
        let (d, f) = (policy.state_dim(), policy.control_dim());
        if model.input_dim() != d + f || model.output_dim() != d {
            return Err(Error::dim(format!(
                "model maps {} inputs to {} outputs; a {d}-state, {f}-control system needs {} to {d}",
                model.input_dim(),
                model.output_dim(),
                d + f
            )));
        }
        if cost.state_dim() != d {
            return Err(Error::dim("cost-space map and policy disagree on the state dimension"));
        }
        Ok(Setup { model, policy, cost, propagation })
    }

    fn state_dim(&self) -> usize {
        self.policy.state_dim()
    }

    /// Successor moments as tangents; policy parameters occupy columns from `theta_offset`.
    fn advance(&self, m: &Tangent, s: &Tangent, theta_offset: usize) -> Result<(Tangent, Tangent)> {
        let d = self.state_dim();
        let u = self.policy.control_tangents(m, s, theta_offset)?;
        let sc = s.matmul(&u.cross);
        let mut joint_cov = Tangent::from_blocks(s, &sc, &sc.transpose(), &u.cov);
        joint_cov.symmetrize();
        let joint_mean = Tangent::vstack(m, &u.mean);
        let map = gp_moment_map(
            self.model,
            &joint_mean.vector(),
            &joint_cov.value,
            self.propagation.method,
            self.propagation.uncertainty,
            m.nvars() > 0,
        )?;
        let delta = map.push(&joint_mean, &joint_cov);
        let xd = joint_cov.matmul(&delta.cross).block(0..d, 0..d);
        let m_next = m.add(&delta.mean);
        let mut s_next = s.add(&delta.cov).add(&xd).add(&xd.transpose());
        s_next.symmetrize();
        Ok((m_next, s_next))
    }

    /// Per-step cost and its gradient with respect to the tangent variables.
    fn cost(&self, m: &Tangent, s: &Tangent) -> Result<(f64, DVector<f64>)> {
        let map = self.cost.space.moments(&m.vector(), &s.value, m.nvars() > 0);
        let y = map.push(m, s);
        let belief = GaussianBelief::new(y.mean.vector(), y.cov.value.clone())?;
        let c = step_cost(&self.cost.config, &belief)?;
        let dc = DVector::from_column_slice(c.d_cov.as_slice());
        let grad = y.mean.jac.transpose() * &c.d_mean + y.cov.jac.transpose() * dc;
        Ok((c.value, grad))
    }
}

fn belief_of(m: &Tangent, s: &Tangent) -> Result<GaussianBelief> {
    GaussianBelief::new(m.vector(), s.value.clone())
}

/// Successor belief with partial derivatives of `[m'; vec S']` and of the successor's step
/// cost with respect to `[m; vec S; θ]`.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub next: GaussianBelief,
    pub cost: f64,
    pub wrt_mean: DMatrix<f64>,
    pub wrt_cov: DMatrix<f64>,
    pub wrt_theta: DMatrix<f64>,
    /// `[d cost/dm, d cost/d vec S, d cost/dθ]` of the successor cost.
    pub cost_grad: DVector<f64>,
}

pub fn step(setup: &Setup, belief: &GaussianBelief) -> Result<StepOutput> {
    let d = setup.state_dim();
    if belief.dim() != d {
        return Err(Error::dim("belief dimension differs from the state dimension"));
    }
    let np = setup.policy.num_params();
    let nv = d + d * d + np;
    let m = Tangent::seed(DMatrix::from_column_slice(d, 1, belief.mean().as_slice()), nv, 0);
    let s = Tangent::seed(belief.cov().clone(), nv, d);
    let (m1, s1) = setup.advance(&m, &s, d + d * d)?;
    let (cost, cost_grad) = setup.cost(&m1, &s1)?;
    let mut rows = DMatrix::zeros(d + d * d, nv);
    rows.rows_mut(0, d).copy_from(&m1.jac);
    rows.rows_mut(d, d * d).copy_from(&s1.jac);
    Ok(StepOutput {
        next: belief_of(&m1, &s1)?,
        cost,
        wrt_mean: rows.columns(0, d).into_owned(),
        wrt_cov: rows.columns(d, d * d).into_owned(),
        wrt_theta: rows.columns(d + d * d, np).into_owned(),
        cost_grad,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolloutReport {
    /// Beliefs for `t = 0..=T`.
    pub beliefs: Vec<GaussianBelief>,
    pub step_costs: Vec<f64>,
    pub total_cost: f64,
    /// `dJ/dθ`, present when requested.
    pub grad: Option<DVector<f64>>,
}

impl RolloutReport {
    pub fn horizon(&self) -> usize {
        self.beliefs.len().saturating_sub(1)
    }

    /// One row per time step: `t`, means, variances, expected cost.
    pub fn to_tsv(&self, dt: f64) -> String {
        let d = self.beliefs.first().map_or(0, |b| b.dim());
        let mut out = String::from("t\ttime");
        for i in 0..d {
            write!(out, "\tmean_{i}").unwrap();
        }
        for i in 0..d {
            write!(out, "\tvar_{i}").unwrap();
        }
        out.push_str("\texpected_cost\n");
        for (t, (b, c)) in self.beliefs.iter().zip(&self.step_costs).enumerate() {
            write!(out, "{t}\t{:.4}", t as f64 * dt).unwrap();
            for v in b.mean().iter() {
                write!(out, "\t{v:.10e}").unwrap();
            }
            for i in 0..d {
                write!(out, "\t{:.10e}", b.cov()[(i, i)]).unwrap();
            }
            writeln!(out, "\t{c:.10e}").unwrap();
        }
        out
    }
}

/// Cascade `horizon` one-step predictions from `initial`; `J = Σ_{t=0}^{T} cost_t`.
pub fn rollout(setup: &Setup, initial: &GaussianBelief, horizon: usize, with_grad: bool) -> Result<RolloutReport> {
    let d = setup.state_dim();
    if initial.dim() != d {
        return Err(Error::dim("initial belief dimension differs from the state dimension"));
    }
    if horizon == 0 {
        return Err(Error::Domain("rollout horizon must be at least one step".into()));
    }
    let nv = if with_grad { setup.policy.num_params() } else { 0 };
    let mut m = Tangent::constant(DMatrix::from_column_slice(d, 1, initial.mean().as_slice()), nv);
    let mut s = Tangent::constant(initial.cov().clone(), nv);
    let trace0 = initial.cov().trace();
    let limit = DIVERGENCE_FACTOR * if trace0 > 0.0 { trace0 } else { 1.0 };

    let mut beliefs = vec![initial.clone()];
    let (c0, _) = setup.cost(&m, &s)?;
    let mut step_costs = vec![c0];
    let mut grad = DVector::zeros(nv);
    for t in 1..=horizon {
        let (m1, s1) = setup.advance(&m, &s, 0)?;
        let trace = s1.value.trace();
        if !trace.is_finite() || trace > limit {
            return Err(Error::Diverged { step: t, trace });
        }
        linalg::check_finite_vector(&m1.vector(), "rollout mean")?;
        let (c, g) = setup.cost(&m1, &s1)?;
        step_costs.push(c);
        grad += g;
        beliefs.push(belief_of(&m1, &s1)?);
        m = m1;
        s = s1;
    }
    let total_cost = step_costs.iter().sum();
    Ok(RolloutReport { beliefs, step_costs, total_cost, grad: with_grad.then_some(grad) })
}

/// `J(θ)` and `dJ/dθ` for a parameter vector, as consumed by the optimizer.
pub fn objective(setup: &Setup, initial: &GaussianBelief, horizon: usize, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let policy = setup.policy.with_theta(theta)?;
    let s = Setup { policy: &policy, ..*setup };
    let r = rollout(&s, initial, horizon, true)?;
    Ok((r.total_cost, r.grad.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{cartpole_tip_map, CostConfig};
    use crate::gp::GpHyperparams;
    use crate::policy::InputAugmentation;
    use crate::verify::{fd_jacobian, max_rel_err, MvnSampler};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small random cart-pole-shaped system: GP on `[x; u]` → Δ with smooth targets.
    fn system(seed: u64, n_data: usize, n_basis: usize) -> (GpModel, Policy, StateCost, GaussianBelief) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n_data, 5, |_, j| rng.gen_range(-1.5f64..1.5) * if j == 4 { 2.0 } else { 1.0 });
        let y = DMatrix::from_fn(n_data, 4, |i, a| {
            let r = x.row(i);
            0.1 * (r[(a + 1) % 4] + 0.3 * r[4]).sin() + 0.05 * r[a] * r[(a + 2) % 4]
        });
        let hps = (0..4)
            .map(|_| GpHyperparams::new(&[1.2, 1.5, 1.0, 1.3, 2.0], 0.02, 1e-4).unwrap())
            .collect();
        let model = GpModel::new(x, y, hps).unwrap();
        let init = GaussianBelief::diagonal(DVector::zeros(4), &[0.01; 4]).unwrap();
        let policy = Policy::random_rbf(
            InputAugmentation::new(4, vec![2]).unwrap(),
            n_basis,
            DVector::from_element(1, 2.0),
            &init,
            0.2,
            &mut rng,
        )
        .unwrap();
        let cost = StateCost::new(CostConfig::new(DVector::from_vec(vec![0.0, 0.5]), 0.25).unwrap(), cartpole_tip_map(0.5)).unwrap();
        (model, policy, cost, init)
    }

    fn check_gradient(prop: Propagation, horizon: usize, kappa: f64) {
        let (model, policy, mut cost, init) = system(1, 40, 4);
        cost.config.ucb_kappa = kappa;
        let setup = Setup::new(&model, &policy, &cost, prop).unwrap();
        let theta = policy.theta();
        assert!(theta.len() <= 30);
        let (_, g) = objective(&setup, &init, horizon, &theta).unwrap();
        let num = fd_jacobian(|t| DVector::from_element(1, objective(&setup, &init, horizon, t).unwrap().0), &theta, 1e-4);
        let err = max_rel_err(&DMatrix::from_row_slice(1, g.len(), g.as_slice()), &num, 1e-6);
        assert!(err < 1e-4, "{prop:?}: rel err {err}");
    }

    #[test]
    fn gradient_matches_finite_differences_moment_matching() {
        check_gradient(Propagation::default(), 6, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_linearized() {
        check_gradient(Propagation { method: InferenceMethod::Linearize, uncertainty: ModelUncertainty::Bayesian }, 6, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_deterministic_mean_and_ucb() {
        check_gradient(Propagation { method: InferenceMethod::MomentMatch, uncertainty: ModelUncertainty::DeterministicMean }, 4, 0.0);
        check_gradient(Propagation::default(), 4, 0.5);
    }

    #[test]
    fn step_partials_match_finite_differences() {
        let (model, policy, cost, init) = system(2, 30, 3);
        let setup = Setup::new(&model, &policy, &cost, Propagation::default()).unwrap();
        let belief = GaussianBelief::new(init.mean().add_scalar(0.1), init.cov() * 2.0).unwrap();
        let out = step(&setup, &belief).unwrap();
        let flat = |b: &GaussianBelief| {
            let mut v = b.mean().as_slice().to_vec();
            v.extend_from_slice(b.cov().as_slice());
            DVector::from_vec(v)
        };
        let num = fd_jacobian(|t| flat(&step(&Setup { policy: &policy.with_theta(t).unwrap(), ..setup }, &belief).unwrap().next), &policy.theta(), 1e-4);
        assert!(max_rel_err(&out.wrt_theta, &num, 1e-6) < 1e-5);
        let num_m = fd_jacobian(|m| flat(&step(&setup, &GaussianBelief::new(m.clone(), belief.cov().clone()).unwrap()).unwrap().next), belief.mean(), 1e-4);
        assert!(max_rel_err(&out.wrt_mean, &num_m, 1e-6) < 1e-5);
    }

    #[test]
    fn rollout_folds_steps_and_costs_are_bounded() {
        let (model, policy, cost, init) = system(3, 30, 3);
        let setup = Setup::new(&model, &policy, &cost, Propagation::default()).unwrap();
        let r = rollout(&setup, &init, 8, false).unwrap();
        let mut b = init.clone();
        for t in 1..=8 {
            b = step(&setup, &b).unwrap().next;
            assert_eq!(&b, &r.beliefs[t]);
            assert_eq!(r.beliefs[t].cov(), &r.beliefs[t].cov().transpose());
        }
        assert!(r.step_costs.iter().all(|&c| (0.0..=1.0).contains(&c)));
        assert!((r.total_cost - r.step_costs.iter().sum::<f64>()).abs() < 1e-15);
        assert_eq!(r.step_costs.len(), 9);
        let one = rollout(&setup, &init, 1, false).unwrap();
        assert_eq!(one.beliefs[1], step(&setup, &init).unwrap().next);
        assert_eq!(r.to_tsv(0.1).lines().count(), 10);
    }

    #[test]
    fn one_step_matches_monte_carlo() {
        let (model, policy, cost, _) = system(4, 30, 3);
        let setup = Setup::new(&model, &policy, &cost, Propagation::default()).unwrap();
        let init = GaussianBelief::diagonal(DVector::from_vec(vec![0.1, -0.2, 0.3, 0.1]), &[0.05, 0.03, 0.08, 0.04]).unwrap();
        let pred = step(&setup, &init).unwrap().next;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sampler = MvnSampler::new(init.mean().clone(), init.cov());
        let n = 20_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x = sampler.sample(&mut rng);
            let u = policy.evaluate(&x).unwrap();
            let mut xu = x.clone().insert_rows(4, 1, 0.0);
            xu[4] = u[0];
            let p = model.predict_point(&xu).unwrap();
            let next = DVector::from_fn(4, |a, _| {
                let sd = (p[a].var + model.outputs()[a].hyperparams().noise_var()).sqrt();
                x[a] + p[a].mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            samples.push(next);
        }
        let mean = samples.iter().fold(DVector::zeros(4), |a, s| a + s) / n as f64;
        for a in 0..4 {
            let var = samples.iter().map(|s| (s[a] - mean[a]).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((pred.mean()[a] - mean[a]).abs() < 4.0 * se, "mean {a}");
            let se_var = var * (2.0 / (n - 1) as f64).sqrt();
            assert!((pred.cov()[(a, a)] - var).abs() < 4.0 * se_var, "var {a}: {} vs {var}", pred.cov()[(a, a)]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (model, policy, cost, _) = system(5, 20, 2);
        // huge initial spread relative to a point start triggers the trace check
        let setup = Setup::new(&model, &policy, &cost, Propagation::default()).unwrap();
        let start = GaussianBelief::diagonal(DVector::zeros(4), &[1e-9; 4]).unwrap();
        let r = rollout(&setup, &start, 3, false);
        assert!(matches!(r, Err(Error::Diverged { step: 1, .. })), "{r:?}");
    }
}
