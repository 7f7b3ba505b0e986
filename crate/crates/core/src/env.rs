//! Simulated plants: cart-pole and two-link pendulum swing-up.
//!
//! Both plants integrate rigid-body ODEs with classical RK4 (100 substeps by default) over each
//! control interval while the control is held constant, then add Gaussian system noise once per interval.
//!
//! Cart-pole state `[x, ẋ, θ, θ̇]`, `θ = 0` hanging down, uniform pole of length `l`:
//! ```text
//! ẍ = (4u − 4bẋ + 2mlθ̇² sin θ + 3mg sin θ cos θ) / (4(M + m) − 3m cos² θ)
//! θ̈ = −3(ẍ cos θ + g sin θ) / (2l)
//! ```
//! Double pendulum state `[θ1, θ2, θ̇1, θ̇2]`, absolute angles from upright, uniform links,
//! torque `u1` at the shoulder and `u2` at the elbow.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{cartpole_tip_map, double_pendulum_tip_map, CostConfig, StateCost};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::gaussian::GaussianBelief;
use crate::policy::{InputAugmentation, Policy};
use crate::verify::MvnSampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Plant {
    Cartpole { cart_mass: f64, pole_mass: f64, pole_length: f64, friction: f64, gravity: f64 },
    DoublePendulum { m1: f64, m2: f64, l1: f64, l2: f64, gravity: f64 },
}

impl Plant {
    pub fn state_dim(&self) -> usize {
        4
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Plant::Cartpole { .. } => 1,
            Plant::DoublePendulum { .. } => 2,
        }
    }

    /// Time derivative of the state under control `u`.
    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match *self {
            Plant::Cartpole { cart_mass: mc, pole_mass: m, pole_length: l, friction: b, gravity: g } => {
                let (xd, th, thd) = (x[1], x[2], x[3]);
                let (s, c) = th.sin_cos();
                let xdd = (4.0 * u[0] - 4.0 * b * xd + 2.0 * m * l * thd * thd * s + 3.0 * m * g * s * c)
                    / (4.0 * (mc + m) - 3.0 * m * c * c);
                let thdd = -3.0 * (xdd * c + g * s) / (2.0 * l);
                DVector::from_vec(vec![xd, xdd, thd, thdd])
            }
            Plant::DoublePendulum { m1, m2, l1, l2, gravity: g } => {
                let (t1, t2, w1, w2) = (x[0], x[1], x[2], x[3]);
                let (s12, c12) = (t1 - t2).sin_cos();
                let h = 0.5 * m2 * l1 * l2;
                let mass = Matrix2::new((m1 / 3.0 + m2) * l1 * l1, h * c12, h * c12, m2 * l2 * l2 / 3.0);
                let rhs = Vector2::new(
                    u[0] - u[1] - h * s12 * w2 * w2 + (0.5 * m1 + m2) * g * l1 * t1.sin(),
                    u[1] + h * s12 * w1 * w1 + 0.5 * m2 * g * l2 * t2.sin(),
                );
                let acc = mass.lu().solve(&rhs).expect("link mass matrix is positive definite");
                DVector::from_vec(vec![w1, w2, acc[0], acc[1]])
            }
        }
    }

    /// Total mechanical energy (potential zero at the pivot height).
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Plant::Cartpole { cart_mass: mc, pole_mass: m, pole_length: l, gravity: g, .. } => {
                let (xd, th, thd) = (x[1], x[2], x[3]);
                0.5 * (mc + m) * xd * xd + 0.5 * m * l * xd * thd * th.cos() + m * l * l * thd * thd / 6.0
                    - 0.5 * m * g * l * th.cos()
            }
            Plant::DoublePendulum { m1, m2, l1, l2, gravity: g } => {
                let (t1, t2, w1, w2) = (x[0], x[1], x[2], x[3]);
                let kin = 0.5 * (m1 / 3.0 + m2) * l1 * l1 * w1 * w1
                    + m2 * l2 * l2 * w2 * w2 / 6.0
                    + 0.5 * m2 * l1 * l2 * (t1 - t2).cos() * w1 * w2;
                kin + (0.5 * m1 + m2) * g * l1 * t1.cos() + 0.5 * m2 * g * l2 * t2.cos()
            }
        }
    }
}

fn default_substeps() -> usize {
    100
}

fn default_window() -> [f64; 2] {
    [2.0, 2.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub plant: Plant,
    pub dt_control: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Diagonal of the per-interval system-noise covariance.
    pub noise_var: Vec<f64>,
    pub u_max: Vec<f64>,
    pub init_mean: Vec<f64>,
    /// Diagonal of the initial state covariance.
    pub init_var: Vec<f64>,
    pub target: Vec<f64>,
    pub sigma_c: f64,
    pub horizon_seconds: f64,
    pub angle_dims: Vec<usize>,
    /// Time window in which the tip must stay within `sigma_c` of the target.
    #[serde(default = "default_window")]
    pub success_window: [f64; 2],
}

impl EnvSpec {
    pub fn cartpole() -> Self {
        EnvSpec {
            plant: Plant::Cartpole { cart_mass: 0.5, pole_mass: 0.5, pole_length: 0.5, friction: 0.1, gravity: 9.82 },
            dt_control: 0.1,
            substeps: default_substeps(),
            noise_var: vec![1e-4; 4],
            u_max: vec![10.0],
            init_mean: vec![0.0; 4],
            init_var: vec![0.01; 4],
            target: vec![0.0, 0.5],
            sigma_c: 0.25,
            horizon_seconds: 2.5,
            angle_dims: vec![2],
            success_window: default_window(),
        }
    }

    pub fn double_pendulum() -> Self {
        EnvSpec {
            plant: Plant::DoublePendulum { m1: 0.5, m2: 0.5, l1: 1.0, l2: 1.0, gravity: 9.82 },
            dt_control: 0.1,
            substeps: default_substeps(),
            noise_var: vec![1e-4; 4],
            u_max: vec![3.0, 3.0],
            init_mean: vec![std::f64::consts::PI, std::f64::consts::PI, 0.0, 0.0],
            init_var: vec![0.01; 4],
            target: vec![0.0, 2.0],
            sigma_c: 0.5,
            horizon_seconds: 2.5,
            angle_dims: vec![0, 1],
            success_window: default_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.state_dim();
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.dt_control > 0.0 && self.dt_control.is_finite()) {
            return bad("dt_control must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        let pos = |v: &[f64]| v.iter().all(|&p| p > 0.0 && p.is_finite());
        let params_ok = match self.plant {
            Plant::Cartpole { cart_mass, pole_mass, pole_length, friction, gravity } => {
                pos(&[cart_mass, pole_mass, pole_length, gravity]) && friction >= 0.0 && friction.is_finite()
            }
            Plant::DoublePendulum { m1, m2, l1, l2, gravity } => pos(&[m1, m2, l1, l2, gravity]),
        };
        if !params_ok {
            return bad("physical parameters must be positive (friction may be zero)");
        }
        if self.noise_var.len() != d || self.init_mean.len() != d || self.init_var.len() != d {
            return bad("noise_var, init_mean and init_var need one entry per state dimension");
        }
        if self.noise_var.iter().chain(&self.init_var).any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad("variances must be finite and non-negative");
        }
        if self.u_max.len() != self.control_dim() || self.u_max.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return bad("u_max needs one positive entry per control");
        }
        if self.target.len() != 2 {
            return bad("target is a 2-D tip position");
        }
        if !(self.sigma_c > 0.0) || !(self.horizon_seconds > 0.0) {
            return bad("sigma_c and horizon_seconds must be positive");
        }
        if self.angle_dims.iter().any(|&i| i >= d) {
            return bad("angle index beyond state dimension");
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.plant.control_dim()
    }

    pub fn horizon_steps(&self) -> usize {
        (self.horizon_seconds / self.dt_control).round() as usize
    }

    pub fn u_max_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_max)
    }

    pub fn init_belief(&self) -> Result<GaussianBelief> {
        GaussianBelief::diagonal(DVector::from_column_slice(&self.init_mean), &self.init_var)
    }

    pub fn augmentation(&self) -> InputAugmentation {
        InputAugmentation { state_dim: self.state_dim(), angle_dims: self.angle_dims.clone() }
    }

    /// State to tip-position map.
    pub fn tip_map(&self) -> FeatureMap {
        match self.plant {
            Plant::Cartpole { pole_length, .. } => cartpole_tip_map(pole_length),
            Plant::DoublePendulum { l1, l2, .. } => double_pendulum_tip_map(l1, l2),
        }
    }

    pub fn state_cost(&self, ucb_kappa: f64) -> Result<StateCost> {
        let cfg = CostConfig::new(DVector::from_column_slice(&self.target), self.sigma_c)?.with_ucb(ucb_kappa);
        StateCost::new(cfg, self.tip_map())
    }

    pub fn tip_distance(&self, x: &DVector<f64>) -> f64 {
        (self.tip_map().evaluate(x) - DVector::from_column_slice(&self.target)).norm()
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    /// Integrate one control interval without noise.
    pub fn integrate(&self, x: &DVector<f64>, u: &DVector<f64>, substeps: usize) -> DVector<f64> {
        let h = self.dt_control / substeps as f64;
        let mut x = x.clone();
        for _ in 0..substeps {
            let k1 = self.plant.derivative(&x, u);
            let k2 = self.plant.derivative(&(&x + &k1 * (0.5 * h)), u);
            let k3 = self.plant.derivative(&(&x + &k2 * (0.5 * h)), u);
            let k4 = self.plant.derivative(&(&x + &k3 * h), u);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    }

    /// Clamp to `[−u_max, u_max]`, warning when a component was out of range.
    pub fn clamp_control(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            let lim = self.u_max[i];
            // the squash can overshoot its bound by an ulp
            if u[i].abs() > lim * (1.0 + 1e-12) {
                log::warn!("control {i} = {} outside ±{lim}, clamped", u[i]);
            }
            u[i].clamp(-lim, lim)
        })
    }
}

/// One control interval with zero-order hold, followed by system noise.
pub fn simulate_step<R: Rng>(spec: &EnvSpec, state: &DVector<f64>, u: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if state.len() != spec.state_dim() || u.len() != spec.control_dim() {
        return Err(Error::dim("state or control dimension does not match the plant"));
    }
    let u = spec.clamp_control(u);
    let mut next = spec.integrate(state, &u, spec.substeps);
    for (i, v) in spec.noise_var.iter().enumerate() {
        if *v > 0.0 {
            next[i] += v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("simulated state {next:?}")));
    }
    Ok(next)
}

pub enum Controller<'a> {
    /// Uniform controls in `[−u_max, u_max]` at every step.
    Random,
    Policy(&'a Policy),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// `(steps + 1) × D`
    pub states: DMatrix<f64>,
    /// `steps × F`
    pub controls: DMatrix<f64>,
    pub spec_hash: String,
    pub seed: u64,
    pub dt: f64,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.controls.nrows()
    }

    pub fn state(&self, t: usize) -> DVector<f64> {
        self.states.row(t).transpose()
    }

    /// GP training pairs: inputs `[x_t, u_t]` and targets `x_{t+1} − x_t`.
    pub fn transitions(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, d, f) = (self.steps(), self.states.ncols(), self.controls.ncols());
        let mut inputs = DMatrix::zeros(n, d + f);
        let mut targets = DMatrix::zeros(n, d);
        for t in 0..n {
            inputs.view_mut((t, 0), (1, d)).copy_from(&self.states.row(t));
            inputs.view_mut((t, d), (1, f)).copy_from(&self.controls.row(t));
            targets.row_mut(t).copy_from(&(self.states.row(t + 1) - self.states.row(t)));
        }
        (inputs, targets)
    }

    /// Tab-separated rows `time, state..., control...`; the final state has no control.
    pub fn to_tsv(&self) -> String {
        let (d, f) = (self.states.ncols(), self.controls.ncols());
        let mut out = format!("# spec_hash={} seed={}\ntime", self.spec_hash, self.seed);
        for i in 0..d {
            write!(out, "\tx{i}").unwrap();
        }
        for i in 0..f {
            write!(out, "\tu{i}").unwrap();
        }
        out.push('\n');
        for t in 0..self.states.nrows() {
            write!(out, "{:.4}", t as f64 * self.dt).unwrap();
            for v in self.states.row(t).iter() {
                write!(out, "\t{v:.12e}").unwrap();
            }
            for i in 0..f {
                if t < self.steps() {
                    write!(out, "\t{:.12e}", self.controls[(t, i)]).unwrap();
                } else {
                    out.push_str("\tnan");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Run one episode from a draw of the initial distribution.
pub fn run_episode_with_rng<R: Rng>(spec: &EnvSpec, controller: &Controller, rng: &mut R, seed: u64) -> Result<Episode> {
    let (d, f, n) = (spec.state_dim(), spec.control_dim(), spec.horizon_steps());
    let init = spec.init_belief()?;
    let mut x = MvnSampler::new(init.mean().clone(), init.cov()).sample(rng);
    let mut states = DMatrix::zeros(n + 1, d);
    let mut controls = DMatrix::zeros(n, f);
    states.row_mut(0).copy_from(&x.transpose());
    for t in 0..n {
        let u = match controller {
            Controller::Random => DVector::from_fn(f, |i, _| rng.gen_range(-spec.u_max[i]..=spec.u_max[i])),
            Controller::Policy(p) => spec.clamp_control(&p.evaluate(&x)?),
        };
        x = simulate_step(spec, &x, &u, rng)?;
        controls.row_mut(t).copy_from(&u.transpose());
        states.row_mut(t + 1).copy_from(&x.transpose());
    }
    Ok(Episode { states, controls, spec_hash: spec.hash(), seed, dt: spec.dt_control })
}

pub fn run_episode(spec: &EnvSpec, controller: &Controller, seed: u64) -> Result<Episode> {
    run_episode_with_rng(spec, controller, &mut ChaCha8Rng::seed_from_u64(seed), seed)
}

/// Tip within `sigma_c` of the target (inclusive) at every recorded step of the window.
pub fn success(episode: &Episode, spec: &EnvSpec) -> bool {
    let [start, end] = spec.success_window;
    let first = (start / episode.dt - 1e-9).ceil().max(0.0) as usize;
    let last = (end / episode.dt + 1e-9).floor() as usize;
    if last >= episode.states.nrows() || first > last {
        return false;
    }
    (first..=last).all(|t| spec.tip_distance(&episode.state(t)) <= spec.sigma_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frictionless_cartpole() -> EnvSpec {
        let mut s = EnvSpec::cartpole();
        if let Plant::Cartpole { friction, .. } = &mut s.plant {
            *friction = 0.0;
        }
        s
    }

    #[test]
    fn defaults_validate() {
        EnvSpec::cartpole().validate().unwrap();
        EnvSpec::double_pendulum().validate().unwrap();
        frictionless_cartpole().validate().unwrap();
        assert_eq!(EnvSpec::cartpole().horizon_steps(), 25);
        let mut bad = EnvSpec::cartpole();
        bad.dt_control = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hanging_cartpole_stays_at_rest() {
        let spec = EnvSpec::cartpole();
        let x = spec.integrate(&DVector::zeros(4), &DVector::zeros(1), spec.substeps);
        assert_eq!(x, DVector::zeros(4));
    }

    #[test]
    fn upright_double_pendulum_is_unstable() {
        let spec = EnvSpec::double_pendulum();
        let mut x = DVector::from_vec(vec![1e-6, 0.0, 0.0, 0.0]);
        for _ in 0..40 {
            x = spec.integrate(&x, &DVector::zeros(2), 10);
        }
        assert!(x[0].abs() > 0.1 || x[1].abs() > 0.1, "{x:?}");
    }

    #[test]
    fn energy_is_conserved_without_friction_and_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [frictionless_cartpole(), EnvSpec::double_pendulum()] {
            for _ in 0..20 {
                let x0 = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
                let u = DVector::zeros(spec.control_dim());
                let e0 = spec.plant.energy(&x0);
                let x1 = spec.integrate(&x0, &u, spec.substeps);
                let e1 = spec.plant.energy(&x1);
                let scale = e0.abs().max(1.0);
                assert!((e1 - e0).abs() / scale < 1e-6, "{:?}: {e0} → {e1}", spec.plant);
            }
        }
    }

    #[test]
    fn integrator_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for spec in [EnvSpec::cartpole(), EnvSpec::double_pendulum()] {
            for _ in 0..20 {
                let x0 = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
                let u = DVector::from_fn(spec.control_dim(), |i, _| rng.gen_range(-spec.u_max[i]..spec.u_max[i]));
                let a = spec.integrate(&x0, &u, spec.substeps);
                let b = spec.integrate(&x0, &u, 2 * spec.substeps);
                assert!((&a - &b).amax() <= 1e-8, "{x0:?} {u:?} {:e}", (a - b).amax());
            }
        }
    }

    #[test]
    fn episodes_are_seeded_and_clamped() {
        let spec = EnvSpec::cartpole();
        let a = run_episode(&spec, &Controller::Random, 7).unwrap();
        let b = run_episode(&spec, &Controller::Random, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps(), 25);
        assert_eq!(a.states.nrows(), 26);
        assert!(a.controls.iter().all(|u| u.abs() <= 10.0));
        let (x, y) = a.transitions();
        assert_eq!((x.nrows(), x.ncols(), y.ncols()), (25, 5, 4));
        assert_eq!(a.to_tsv().lines().count(), 28);
    }

    #[test]
    fn random_control_rarely_succeeds() {
        for spec in [EnvSpec::cartpole(), EnvSpec::double_pendulum()] {
            let wins = (0..100).filter(|&s| success(&run_episode(&spec, &Controller::Random, s).unwrap(), &spec)).count();
            assert!(wins <= 1, "{wins}");
        }
    }

    fn pinned(spec: &EnvSpec, x: DVector<f64>) -> Episode {
        let n = spec.horizon_steps();
        Episode {
            states: DMatrix::from_fn(n + 1, 4, |_, j| x[j]),
            controls: DMatrix::zeros(n, spec.control_dim()),
            spec_hash: spec.hash(),
            seed: 0,
            dt: spec.dt_control,
        }
    }

    #[test]
    fn success_predicate() {
        let spec = EnvSpec::cartpole();
        let pi = std::f64::consts::PI;
        assert!(success(&pinned(&spec, DVector::from_vec(vec![0.0, 0.0, pi, 0.0])), &spec));
        assert!(!success(&pinned(&spec, DVector::zeros(4)), &spec));
        // cart displaced by exactly sigma_c with the pole upright
        assert!(success(&pinned(&spec, DVector::from_vec(vec![-0.25, 0.0, pi, 0.0])), &spec));
        assert!(!success(&pinned(&spec, DVector::from_vec(vec![-0.2500001, 0.0, pi, 0.0])), &spec));
        let dp = EnvSpec::double_pendulum();
        assert!(success(&pinned(&dp, DVector::zeros(4)), &dp));
        assert!(!success(&pinned(&dp, DVector::from_vec(vec![pi, pi, 0.0, 0.0])), &dp));
    }
}
