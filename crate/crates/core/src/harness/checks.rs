use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cost::{cartpole_tip_map, immediate_cost, step_cost, CostConfig, StateCost};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::gp::{log_evidence, GpHyperparams, GpModel};
use crate::inference::{predict, prediction_gradients, InferenceMethod, ModelUncertainty, UncertainPrediction};
use crate::policy::{squash, squash_moments, InputAugmentation, Policy};
use crate::rollout::{rollout, step, Propagation, Setup};
use crate::verify::{
    fd_jacobian, max_rel_err, max_z_score, pack_moments, packed_cov_columns, random_spd, unpack_moments, McMoments, MvnSampler,
};

/// Closed forms are flagged when they differ from Monte Carlo by more than this many
/// standard errors.
pub const ORACLE_Z_LIMIT: f64 = 4.0;
pub const MIN_ORACLE_SAMPLES: usize = 100_000;

/// GP with random data and hyperparameters on `d` inputs and `e` outputs.
pub fn random_gp_model<R: Rng>(rng: &mut R, n: usize, d: usize, e: usize) -> Result<GpModel> {
    let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0f64..2.0));
    let w = DMatrix::from_fn(e, d, |_, _| rng.gen_range(-1.0..1.0));
    let y = DMatrix::from_fn(n, e, |i, a| (x.row(i) * w.row(a).transpose())[0].sin() + 0.2 * x[(i, 0)]);
    let hps = (0..e)
        .map(|_| {
            let ell: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
            GpHyperparams::new(&ell, rng.gen_range(0.3..1.5), rng.gen_range(0.005..0.05))
        })
        .collect::<Result<Vec<_>>>()?;
    GpModel::new(x, y, hps)
}

/// A small cart-pole-shaped system: a GP on `[x; u]` predicting state changes, an RBF policy
/// on the augmented state, the tip cost, and an initial belief.
pub struct RandomSystem {
    pub model: GpModel,
    pub policy: Policy,
    pub cost: StateCost,
    pub init: GaussianBelief,
}

pub fn random_system<R: Rng>(rng: &mut R, n_data: usize, n_basis: usize) -> Result<RandomSystem> {
    let x = DMatrix::from_fn(n_data, 5, |_, j| rng.gen_range(-1.5f64..1.5) * if j == 4 { 2.0 } else { 1.0 });
    let phase: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = DMatrix::from_fn(n_data, 4, |i, a| {
        let r = x.row(i);
        0.1 * (r[(a + 1) % 4] + 0.3 * r[4] + phase[a]).sin() + 0.05 * r[a] * r[(a + 2) % 4]
    });
    let hps = (0..4)
        .map(|_| {
            let ell: Vec<f64> = (0..5).map(|_| rng.gen_range(1.0..2.0)).collect();
            GpHyperparams::new(&ell, rng.gen_range(0.01..0.03), 1e-4)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = GpModel::new(x, y, hps)?;
    let init = GaussianBelief::diagonal(DVector::from_fn(4, |_, _| rng.gen_range(-0.2..0.2)), &[0.01; 4])?;
    let policy = Policy::random_rbf(InputAugmentation::new(4, vec![2])?, n_basis, DVector::from_element(1, 2.0), &init, 0.2, rng)?;
    let cost = StateCost::new(CostConfig::new(DVector::from_vec(vec![0.0, 0.5]), 0.25)?, cartpole_tip_map(0.5))?;
    Ok(RandomSystem { model, policy, cost, init })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleSubject {
    MomentMatch,
    SquashMoments,
    ExpectedCost,
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradSubject {
    Rollout,
    Policy,
    Cost,
    Evidence,
    Inference,
}

fn parse_name<T: Copy>(s: &str, table: &[(&str, T)]) -> Result<T> {
    let key = s.replace('-', "_");
    table
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Config(format!("unknown subject {s}; expected one of {}", table.iter().map(|t| t.0).collect::<Vec<_>>().join(", "))))
}

const ORACLE_NAMES: [(&str, OracleSubject); 4] = [
    ("moment_match", OracleSubject::MomentMatch),
    ("squash_moments", OracleSubject::SquashMoments),
    ("expected_cost", OracleSubject::ExpectedCost),
    ("step", OracleSubject::Step),
];

const GRAD_NAMES: [(&str, GradSubject); 5] = [
    ("rollout", GradSubject::Rollout),
    ("policy", GradSubject::Policy),
    ("cost", GradSubject::Cost),
    ("evidence", GradSubject::Evidence),
    ("inference", GradSubject::Inference),
];

impl FromStr for OracleSubject {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_name(s, &ORACLE_NAMES)
    }
}

impl FromStr for GradSubject {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_name(s, &GRAD_NAMES)
    }
}

impl OracleSubject {
    pub const ALL: [OracleSubject; 4] = [Self::MomentMatch, Self::SquashMoments, Self::ExpectedCost, Self::Step];
}

impl GradSubject {
    pub const ALL: [GradSubject; 5] = [Self::Rollout, Self::Policy, Self::Cost, Self::Evidence, Self::Inference];

    /// Relative-error tolerance: full rollouts accumulate more round-off than single maps.
    pub fn tolerance(self) -> f64 {
        match self {
            GradSubject::Rollout => 1e-4,
            _ => 1e-5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub trial: usize,
    pub value: f64,
    pub detail: String,
}

/// Per-trial comparison table: `value` is a z-score for oracle checks and a relative error
/// for gradient checks.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub subject: String,
    pub limit: f64,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.value).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.value <= self.limit)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (limit {:e})", self.subject, self.limit)?;
        for r in &self.rows {
            writeln!(f, "  trial {:>3}  {:>12.4e}  {}", r.trial, r.value, r.detail)?;
        }
        write!(f, "  worst {:.4e}  {}", self.worst(), if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Compare the closed form `(mean, cov, cross)` against a Monte Carlo estimate. `perturb`
/// scales the closed-form covariance, which lets tests confirm the check can fail.
fn z_compare(closed: (&DVector<f64>, &DMatrix<f64>, Option<&DMatrix<f64>>), mc: &McMoments, perturb: f64) -> f64 {
    let est = mc.estimate();
    let cov = closed.1 * (1.0 + perturb);
    let mut z = max_z_score(closed.0.as_slice(), est.mean.as_slice(), est.mean_se.as_slice(), 1e-12);
    z = z.max(max_z_score(cov.as_slice(), est.cov.as_slice(), est.cov_se.as_slice(), 1e-12));
    if let Some(cross) = closed.2 {
        z = z.max(max_z_score(cross.as_slice(), est.cross.as_slice(), est.cross_se.as_slice(), 1e-12));
    }
    z
}

/// Per-sample GP prediction with precomputed factors (faster than repeated point queries).
struct FastGp<'a> {
    model: &'a GpModel,
    inv_ell2: Vec<DVector<f64>>,
}

impl<'a> FastGp<'a> {
    fn new(model: &'a GpModel) -> Self {
        let inv_ell2 = model.outputs().iter().map(|o| o.hyperparams().length_scales().map(|l| 1.0 / (l * l))).collect();
        FastGp { model, inv_ell2 }
    }

    /// Sample `Δ` at `x`: posterior mean plus latent and noise variance.
    fn sample<R: Rng>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let inputs = self.model.inputs();
        let n = inputs.nrows();
        DVector::from_fn(self.model.output_dim(), |a, _| {
            let o = &self.model.outputs()[a];
            let sf2 = o.hyperparams().signal_var();
            let w = &self.inv_ell2[a];
            let k = DVector::from_fn(n, |i, _| {
                let mut q = 0.0;
                for c in 0..x.len() {
                    let d = inputs[(i, c)] - x[c];
                    q += d * d * w[c];
                }
                sf2 * (-0.5 * q).exp()
            });
            let mean = k.dot(o.beta());
            let var = (sf2 - k.dot(&(o.inv_k() * &k))).max(0.0) + o.hyperparams().noise_var();
            mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
    }
}

fn oracle_trial(subject: OracleSubject, trial: usize, samples: usize, rng: &mut ChaCha8Rng, perturb: f64) -> Result<CheckRow> {
    match subject {
        OracleSubject::MomentMatch => {
            let d = rng.gen_range(1..=3);
            let e = rng.gen_range(1..=2);
            let n = rng.gen_range(10..=50);
            let model = random_gp_model(rng, n, d, e)?;
            let m = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let s = random_spd(rng, d, 0.5);
            let input = GaussianBelief::new(m.clone(), s.clone())?;
            let UncertainPrediction { delta_mean, delta_cov, input_delta_cross_cov } =
                predict(&model, &input, InferenceMethod::MomentMatch, ModelUncertainty::Bayesian)?;
            let gp = FastGp::new(&model);
            let sampler = MvnSampler::new(m.clone(), &s);
            let mut mc = McMoments::new(m, delta_mean.clone());
            for _ in 0..samples {
                let x = sampler.sample(rng);
                let y = gp.sample(&x, rng);
                mc.push(&x, &y);
            }
            let z = z_compare((&delta_mean, &delta_cov, Some(&input_delta_cross_cov)), &mc, perturb);
            Ok(CheckRow { trial, value: z, detail: format!("D={d} E={e} n={n}") })
        }
        OracleSubject::SquashMoments => {
            let f = rng.gen_range(1..=2);
            let m = DVector::from_fn(f, |_, _| rng.gen_range(-2.0f64..2.0));
            let s = random_spd(rng, f, 2.0);
            let u_max = DVector::from_fn(f, |_, _| rng.gen_range(1.0..10.0));
            let z = GaussianBelief::new(m.clone(), s.clone())?;
            let c = squash_moments(&z, &s, &u_max)?;
            let sampler = MvnSampler::new(m.clone(), &s);
            let mut mc = McMoments::new(m, c.u_mean.clone());
            for _ in 0..samples {
                let x = sampler.sample(rng);
                let u = DVector::from_fn(f, |i, _| u_max[i] * squash(x[i]));
                mc.push(&x, &u);
            }
            let zs = z_compare((&c.u_mean, &c.u_cov, Some(&c.state_control_cross_cov)), &mc, perturb);
            Ok(CheckRow { trial, value: zs, detail: format!("F={f}") })
        }
        OracleSubject::ExpectedCost => {
            let cfg = CostConfig::new(DVector::from_vec(vec![0.0, 0.5]), 0.25)?;
            let m = DVector::from_fn(2, |i, _| cfg.target[i] + rng.gen_range(-0.4..0.4));
            let s = random_spd(rng, 2, 0.05);
            let b = GaussianBelief::new(m.clone(), s.clone())?;
            let mean = DVector::from_element(1, step_cost(&cfg, &b)?.value);
            let sd = crate::cost::cost_std(&cfg, &b)?;
            let var = DMatrix::from_element(1, 1, sd * sd);
            let sampler = MvnSampler::new(m.clone(), &s);
            let mut mc = McMoments::new(m, mean.clone());
            for _ in 0..samples {
                let y = sampler.sample(rng);
                mc.push(&y, &DVector::from_element(1, immediate_cost(&cfg, &y)));
            }
            let z = z_compare((&mean, &var, None), &mc, perturb);
            Ok(CheckRow { trial, value: z, detail: format!("E[c]={:.4} sd={sd:.4}", mean[0]) })
        }
        OracleSubject::Step => {
            let sys = random_system(rng, 30, 4)?;
            let setup = Setup::new(&sys.model, &sys.policy, &sys.cost, Propagation::default())?;
            let start = GaussianBelief::new(sys.init.mean().clone(), random_spd(rng, 4, 0.05))?;
            let next = step(&setup, &start)?.next;
            // The step treats (x, u) as jointly Gaussian; sample from that joint so the
            // comparison is exact. The control moments themselves are checked by the squash suite.
            let c = sys.policy.control_moments(&start, false)?;
            let jm = DVector::from_iterator(5, start.mean().iter().chain(c.u_mean.iter()).copied());
            let mut js = DMatrix::zeros(5, 5);
            js.view_mut((0, 0), (4, 4)).copy_from(start.cov());
            js.view_mut((0, 4), (4, 1)).copy_from(&c.state_control_cross_cov);
            js.view_mut((4, 0), (1, 4)).copy_from(&c.state_control_cross_cov.transpose());
            js.view_mut((4, 4), (1, 1)).copy_from(&c.u_cov);
            let gp = FastGp::new(&sys.model);
            let sampler = MvnSampler::new(jm, &js);
            let mut mc = McMoments::new(start.mean().clone(), next.mean().clone());
            for _ in 0..samples {
                let xu = sampler.sample(rng);
                let x = xu.rows(0, 4).into_owned();
                let x1 = &x + gp.sample(&xu, rng);
                mc.push(&x, &x1);
            }
            let z = z_compare((next.mean(), next.cov(), None), &mc, perturb);
            Ok(CheckRow { trial, value: z, detail: "D=4 F=1 n=30".into() })
        }
    }
}

/// Closed-form moments against Monte Carlo on random instances.
pub fn oracle_check(subject: OracleSubject, trials: usize, samples: usize, seed: u64) -> Result<CheckReport> {
    oracle_check_perturbed(subject, trials, samples, seed, 0.0)
}

/// As [`oracle_check`] with the closed-form covariance scaled by `1 + perturb`.
pub fn oracle_check_perturbed(subject: OracleSubject, trials: usize, samples: usize, seed: u64, perturb: f64) -> Result<CheckReport> {
    if samples < MIN_ORACLE_SAMPLES {
        return Err(Error::Config(format!("oracle checks need at least {MIN_ORACLE_SAMPLES} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..trials).map(|t| oracle_trial(subject, t, samples, &mut rng, perturb)).collect::<Result<Vec<_>>>()?;
    Ok(CheckReport { subject: format!("oracle {}", name_of(&ORACLE_NAMES, subject)), limit: ORACLE_Z_LIMIT, rows })
}

fn name_of<T: PartialEq + Copy>(table: &[(&'static str, T)], v: T) -> &'static str {
    table.iter().find(|(_, x)| *x == v).map(|t| t.0).unwrap_or("?")
}

/// Rows of `[mean; vec cov; vec cross]` against the packed input moments.
fn fd_blocks_err(
    analytic_mean: &DMatrix<f64>,
    analytic_cov: &DMatrix<f64>,
    f: impl Fn(&DVector<f64>, &DMatrix<f64>) -> DVector<f64>,
    m: &DVector<f64>,
    s: &DMatrix<f64>,
) -> f64 {
    let d = m.len();
    let num = fd_jacobian(
        |v| {
            let (m, s) = unpack_moments(v, d);
            f(&m, &s)
        },
        &pack_moments(m, s),
        1e-4,
    );
    let nm = num.columns(0, d).into_owned();
    let ns = num.columns(d, num.ncols() - d).into_owned();
    max_rel_err(analytic_mean, &nm, 1e-6).max(max_rel_err(&packed_cov_columns(analytic_cov, d), &ns, 1e-6))
}

fn flat_prediction(p: &UncertainPrediction) -> DVector<f64> {
    let mut v = p.delta_mean.as_slice().to_vec();
    v.extend_from_slice(p.delta_cov.as_slice());
    v.extend_from_slice(p.input_delta_cross_cov.as_slice());
    DVector::from_vec(v)
}

fn grad_trial(subject: GradSubject, trial: usize, rng: &mut ChaCha8Rng) -> Result<CheckRow> {
    let method = if trial.is_multiple_of(2) { InferenceMethod::MomentMatch } else { InferenceMethod::Linearize };
    match subject {
        GradSubject::Rollout => {
            let sys = random_system(rng, 30, 4)?;
            let horizon = rng.gen_range(3..=10);
            let prop = Propagation { method, uncertainty: ModelUncertainty::Bayesian };
            let setup = Setup::new(&sys.model, &sys.policy, &sys.cost, prop)?;
            let r = rollout(&setup, &sys.init, horizon, true)?;
            let g = r.grad.expect("gradient requested");
            let num = fd_jacobian(
                |t| {
                    let p = sys.policy.with_theta(t).expect("same shape");
                    let v = rollout(&Setup { policy: &p, ..setup }, &sys.init, horizon, false).map_or(f64::NAN, |r| r.total_cost);
                    DVector::from_element(1, v)
                },
                &sys.policy.theta(),
                1e-4,
            );
            let err = max_rel_err(&DMatrix::from_row_slice(1, g.len(), g.as_slice()), &num, 1e-6);
            Ok(CheckRow { trial, value: err, detail: format!("{method:?} T={horizon} |θ|={}", g.len()) })
        }
        GradSubject::Policy => {
            let sys = random_system(rng, 10, 3)?;
            let policy = if trial.is_multiple_of(2) {
                sys.policy
            } else {
                let p = Policy::random_linear(InputAugmentation::new(4, vec![2])?, DVector::from_element(1, 3.0), rng)?;
                p.with_theta(&(p.theta() * 0.3))?
            };
            let m = DVector::from_fn(4, |_, _| rng.gen_range(-0.5..0.5));
            let s = random_spd(rng, 4, 0.2);
            let b = GaussianBelief::new(m.clone(), s.clone())?;
            let c = policy.control_moments(&b, true)?;
            let jac = c.jac.as_ref().expect("jacobian requested");
            let flat = |c: &crate::policy::ControlMoments| {
                let mut v = c.u_mean.as_slice().to_vec();
                v.extend_from_slice(c.u_cov.as_slice());
                v.extend_from_slice(c.state_control_cross_cov.as_slice());
                DVector::from_vec(v)
            };
            let num_t = fd_jacobian(|t| flat(&policy.with_theta(t).unwrap().control_moments(&b, false).unwrap()), &policy.theta(), 1e-4);
            let e1 = max_rel_err(&jac.wrt_theta, &num_t, 1e-6);
            let e2 = fd_blocks_err(
                &jac.wrt_mean,
                &jac.wrt_cov,
                |m, s| flat(&policy.control_moments(&GaussianBelief::new(m.clone(), s.clone()).unwrap(), false).unwrap()),
                &m,
                &s,
            );
            let kind = if trial.is_multiple_of(2) { "rbf" } else { "linear" };
            Ok(CheckRow { trial, value: e1.max(e2), detail: format!("{kind} θ {e1:.2e} input {e2:.2e}") })
        }
        GradSubject::Cost => {
            let mut cfg = CostConfig::new(DVector::from_vec(vec![0.0, 0.5]), 0.25)?;
            cfg.ucb_kappa = if trial.is_multiple_of(2) { 0.0 } else { rng.gen_range(0.1..1.0) };
            let m = DVector::from_fn(2, |i, _| cfg.target[i] + rng.gen_range(-0.5..0.5));
            let s = random_spd(rng, 2, 0.05);
            let c = step_cost(&cfg, &GaussianBelief::new(m.clone(), s.clone())?)?;
            let gm = DMatrix::from_row_slice(1, 2, c.d_mean.as_slice());
            let gs = DMatrix::from_row_slice(1, 4, c.d_cov.as_slice());
            let err = fd_blocks_err(
                &gm,
                &gs,
                |m, s| DVector::from_element(1, step_cost(&cfg, &GaussianBelief::new(m.clone(), s.clone()).unwrap()).unwrap().value),
                &m,
                &s,
            );
            Ok(CheckRow { trial, value: err, detail: format!("kappa={:.2}", cfg.ucb_kappa) })
        }
        GradSubject::Evidence => {
            let d = rng.gen_range(1..=4);
            let n = rng.gen_range(10..=40);
            let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0f64..2.0));
            let y = DVector::from_fn(n, |i, _| x[(i, 0)].sin() + 0.1 * rng.sample::<f64, _>(StandardNormal));
            let ell: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
            let hp = GpHyperparams::new(&ell, rng.gen_range(0.5..2.0), rng.gen_range(0.01..0.1))?;
            let (_, g) = log_evidence(&x, &y, &hp)?;
            let num = fd_jacobian(
                |l| DVector::from_element(1, log_evidence(&x, &y, &GpHyperparams::from_log(l.clone()).unwrap()).unwrap().0),
                hp.log_params(),
                1e-4,
            );
            let err = max_rel_err(&DMatrix::from_row_slice(1, g.len(), g.as_slice()), &num, 1e-6);
            Ok(CheckRow { trial, value: err, detail: format!("n={n} D={d}") })
        }
        GradSubject::Inference => {
            let d = rng.gen_range(2..=4);
            let e = rng.gen_range(1..=3);
            let model = random_gp_model(rng, 20, d, e)?;
            let m = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let s = random_spd(rng, d, 0.3);
            let input = GaussianBelief::new(m.clone(), s.clone())?;
            let unc = if trial % 4 == 3 { ModelUncertainty::DeterministicMean } else { ModelUncertainty::Bayesian };
            let g = prediction_gradients(&model, &input, method, unc)?;
            let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>| {
                let mut out = DMatrix::zeros(a.nrows() + b.nrows() + c.nrows(), a.ncols());
                out.rows_mut(0, a.nrows()).copy_from(a);
                out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
                out.rows_mut(a.nrows() + b.nrows(), c.nrows()).copy_from(c);
                out
            };
            let jm = stack(&g.d_mean_d_input_mean, &g.d_cov_d_input_mean, &g.d_crosscov_d_input_mean);
            let js = stack(&g.d_mean_d_input_cov, &g.d_cov_d_input_cov, &g.d_crosscov_d_input_cov);
            let err = fd_blocks_err(
                &jm,
                &js,
                |m, s| flat_prediction(&predict(&model, &GaussianBelief::new(m.clone(), s.clone()).unwrap(), method, unc).unwrap()),
                &m,
                &s,
            );
            Ok(CheckRow { trial, value: err, detail: format!("{method:?} {unc:?} D={d} E={e}") })
        }
    }
}

/// Analytic derivatives against five-point finite differences on random instances.
pub fn grad_check(subject: GradSubject, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..trials).map(|t| grad_trial(subject, t, &mut rng)).collect::<Result<Vec<_>>>()?;
    Ok(CheckReport { subject: format!("grad {}", name_of(&GRAD_NAMES, subject)), limit: subject.tolerance(), rows })
}
