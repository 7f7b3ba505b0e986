//! Multi-output Gaussian-process regression with squared-exponential ARD kernels.
//!
//! Each output dimension is an independent zero-mean GP. Hyperparameters are optimized in log
//! space by maximizing the log marginal likelihood.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::optimizer::{minimize, OptimSettings};

/// Length-scales, signal variance and noise variance of one output.
///
/// Stored as `[log ℓ_1 .. log ℓ_D, log σ_f, log σ_w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpHyperparams {
    log: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct NaturalHyperparams {
    length_scales: Vec<f64>,
    signal_var: f64,
    noise_var: f64,
}

impl Serialize for GpHyperparams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NaturalHyperparams {
            length_scales: self.length_scales().as_slice().to_vec(),
            signal_var: self.signal_var(),
            noise_var: self.noise_var(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpHyperparams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = NaturalHyperparams::deserialize(d)?;
        GpHyperparams::new(&n.length_scales, n.signal_var, n.noise_var).map_err(serde::de::Error::custom)
    }
}

impl GpHyperparams {
    pub fn new(length_scales: &[f64], signal_var: f64, noise_var: f64) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !length_scales.iter().all(|&l| positive(l)) || !positive(signal_var) || !positive(noise_var) {
            return Err(Error::Domain("hyperparameters must be finite and strictly positive".into()));
        }
        let mut log: Vec<f64> = length_scales.iter().map(|l| l.ln()).collect();
        log.push(0.5 * signal_var.ln());
        log.push(0.5 * noise_var.ln());
        Ok(GpHyperparams { log: DVector::from_vec(log) })
    }

    pub fn from_log(log: DVector<f64>) -> Result<Self> {
        if log.len() < 2 || log.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("log hyperparameters must be finite, length ≥ 2".into()));
        }
        Ok(GpHyperparams { log })
    }

    pub fn log_params(&self) -> &DVector<f64> {
        &self.log
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.log.len() - 2
    }

    pub fn log_length_scales(&self) -> DVector<f64> {
        self.log.rows(0, self.dim()).into_owned()
    }

    pub fn length_scales(&self) -> DVector<f64> {
        self.log_length_scales().map(f64::exp)
    }

    pub fn signal_var(&self) -> f64 {
        (2.0 * self.log[self.dim()]).exp()
    }

    pub fn noise_var(&self) -> f64 {
        (2.0 * self.log[self.dim() + 1]).exp()
    }
}

/// `σ_f² exp(−½ (xa−xb)ᵀ Λ⁻¹ (xa−xb))`, plus `σ_w²` when `same_point` is set.
pub fn se_kernel(xa: &DVector<f64>, xb: &DVector<f64>, hp: &GpHyperparams, same_point: bool) -> Result<f64> {
    let d = hp.dim();
    if xa.len() != d || xb.len() != d {
        return Err(Error::dim(format!("kernel inputs of length {} and {} for {d} length-scales", xa.len(), xb.len())));
    }
    let ell = hp.length_scales();
    let r2: f64 = (0..d).map(|k| ((xa[k] - xb[k]) / ell[k]).powi(2)).sum();
    let mut v = hp.signal_var() * (-0.5 * r2).exp();
    if same_point {
        v += hp.noise_var();
    }
    Ok(v)
}

/// SE kernel between the rows of `a` and the rows of `b` (no noise term).
pub(crate) fn se_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, inv_ell: &DVector<f64>, sf2: f64) -> DMatrix<f64> {
    let d = a.ncols();
    let mut k = DMatrix::zeros(a.nrows(), b.nrows());
    for j in 0..b.nrows() {
        for i in 0..a.nrows() {
            let mut r2 = 0.0;
            for c in 0..d {
                let t = (a[(i, c)] - b[(j, c)]) * inv_ell[c];
                r2 += t * t;
            }
            k[(i, j)] = sf2 * (-0.5 * r2).exp();
        }
    }
    k
}

/// Cached quantities of one fitted output dimension.
#[derive(Clone, Debug)]
pub struct GpOutput {
    hp: GpHyperparams,
    chol: Cholesky<f64, Dyn>,
    beta: DVector<f64>,
    inv_k: DMatrix<f64>,
    jitter: f64,
}

impl GpOutput {
    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hp
    }

    /// `(K + σ_w² I)⁻¹ y`.
    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// `(K + σ_w² I)⁻¹`, formed from the Cholesky factor.
    pub fn inv_k(&self) -> &DMatrix<f64> {
        &self.inv_k
    }

    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Diagonal jitter that had to be added for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }
}

/// Point prediction of one output: latent mean and variance (without observation noise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointPrediction {
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Debug)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    outputs: Vec<GpOutput>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    /// Additional optimizations from randomly perturbed starting points.
    pub restarts: usize,
    pub optim: OptimSettings,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            restarts: 3,
            optim: OptimSettings { max_iters: 200, grad_tol: 1e-6, ..OptimSettings::default() },
            seed: 0,
        }
    }
}

const FORMAT_TAG: &str = "pilco-gp";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    hyperparams: Vec<GpHyperparams>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("ragged {what} rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn build_output(inputs: &DMatrix<f64>, y: &DVector<f64>, hp: GpHyperparams, index: usize) -> Result<GpOutput> {
    let inv_ell = hp.length_scales().map(|l| 1.0 / l);
    let mut k = se_cross(inputs, inputs, &inv_ell, hp.signal_var());
    for i in 0..k.nrows() {
        k[(i, i)] += hp.noise_var();
    }
    let (chol, jitter) = linalg::cholesky_with_jitter(&k, index)?;
    let beta = chol.solve(y);
    let inv_k = chol.inverse();
    Ok(GpOutput { hp, chol, beta, inv_k, jitter })
}

fn check_training_data(inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::dim(format!("{} inputs but {} targets", inputs.nrows(), targets.nrows())));
    }
    linalg::check_finite_matrix(inputs, "training inputs")?;
    linalg::check_finite_matrix(targets, "training targets")?;
    Ok(())
}

fn check_duplicates(inputs: &DMatrix<f64>) -> Result<()> {
    let n = inputs.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let close = (0..inputs.ncols()).all(|c| (inputs[(i, c)] - inputs[(j, c)]).abs() < 1e-10);
            if close {
                return Err(Error::Domain(format!("training inputs {i} and {j} coincide")));
            }
        }
    }
    Ok(())
}

impl GpModel {
    /// Condition on training data with given hyperparameters (one set per target column).
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>, hyperparams: Vec<GpHyperparams>) -> Result<Self> {
        check_training_data(&inputs, &targets)?;
        if hyperparams.len() != targets.ncols() {
            return Err(Error::dim(format!(
                "{} hyperparameter sets for {} outputs",
                hyperparams.len(),
                targets.ncols()
            )));
        }
        if let Some(hp) = hyperparams.iter().find(|hp| hp.dim() != inputs.ncols()) {
            return Err(Error::dim(format!("{} length-scales for {}-dimensional inputs", hp.dim(), inputs.ncols())));
        }
        let outputs = hyperparams
            .into_iter()
            .enumerate()
            .map(|(a, hp)| build_output(&inputs, &targets.column(a).into_owned(), hp, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(GpModel { inputs, targets, outputs })
    }

    /// Scale-aware starting hyperparameters: per-dimension input standard deviation,
    /// target variance, and 1% of the target variance as noise.
    pub fn default_init(inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Vec<GpHyperparams>> {
        let n = inputs.nrows() as f64;
        let std_of = |col: DVector<f64>| {
            let mean = col.mean();
            (col.map(|v| (v - mean).powi(2)).sum() / n).sqrt()
        };
        let ell: Vec<f64> = (0..inputs.ncols())
            .map(|c| {
                let s = std_of(inputs.column(c).into_owned());
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        (0..targets.ncols())
            .map(|a| {
                let var = std_of(targets.column(a).into_owned()).powi(2).max(1e-8);
                GpHyperparams::new(&ell, var, 0.01 * var)
            })
            .collect()
    }

    /// Fit hyperparameters by evidence maximization, keeping the best of the start at `init`
    /// (or [`GpModel::default_init`]), the data-scaled default, a low-noise variant of it, and
    /// `settings.restarts` perturbed starts.
    pub fn fit(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        init: Option<Vec<GpHyperparams>>,
        settings: &FitSettings,
    ) -> Result<Self> {
        check_training_data(&inputs, &targets)?;
        if inputs.nrows() < 2 {
            return Err(Error::Domain("at least two training points are required".into()));
        }
        check_duplicates(&inputs)?;
        let scaled = Self::default_init(&inputs, &targets)?;
        if init.as_ref().is_some_and(|v| v.len() != targets.ncols()) {
            return Err(Error::dim("one initial hyperparameter set per output is required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mut hps = Vec::with_capacity(scaled.len());
        for (a, hp_scaled) in scaled.iter().enumerate() {
            let y = targets.column(a).into_owned();
            let hp0 = init.as_ref().map_or(hp_scaled, |v| &v[a]);
            // Deterministic starts: the given (or scaled) one, the scaled one, and the scaled
            // one with a hundredfold smaller noise variance.
            let mut low_noise = hp_scaled.log_params().clone();
            let last = low_noise.len() - 1;
            low_noise[last] -= 10f64.ln();
            let mut starts = vec![hp0.log_params().clone()];
            if init.is_some() {
                starts.push(hp_scaled.log_params().clone());
            }
            starts.push(low_noise);
            for _ in 0..settings.restarts {
                starts.push(hp0.log_params().map(|v| v + rng.gen_range(-1.0..1.0)));
            }
            let mut best: Option<(f64, DVector<f64>)> = None;
            for x0 in starts {
                let objective = |x: &DVector<f64>| negative_evidence(&inputs, &y, x);
                if !objective(&x0).0.is_finite() {
                    continue;
                }
                let res = minimize(objective, &x0, &settings.optim)?;
                if best.as_ref().is_none_or(|(v, _)| res.value < *v) {
                    best = Some((res.value, res.x));
                }
            }
            let (_, x) = best.ok_or(Error::Cholesky { output: a, jitter: f64::NAN })?;
            hps.push(GpHyperparams::from_log(x)?);
        }
        Self::new(inputs, targets, hps)
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn outputs(&self) -> &[GpOutput] {
        &self.outputs
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn hyperparams(&self) -> Vec<GpHyperparams> {
        self.outputs.iter().map(|o| o.hp.clone()).collect()
    }

    /// Relative residual `‖(K + σ_w² I)β − y‖ / ‖y‖` of output `a`.
    pub fn beta_residual(&self, a: usize) -> f64 {
        let o = &self.outputs[a];
        let inv_ell = o.hp.length_scales().map(|l| 1.0 / l);
        let mut k = se_cross(&self.inputs, &self.inputs, &inv_ell, o.hp.signal_var());
        for i in 0..k.nrows() {
            k[(i, i)] += o.hp.noise_var();
        }
        let y = self.targets.column(a);
        (k * &o.beta - y).norm() / y.norm().max(f64::MIN_POSITIVE)
    }

    /// Posterior mean and latent variance of every output at a deterministic input.
    pub fn predict_point(&self, xq: &DVector<f64>) -> Result<Vec<PointPrediction>> {
        if xq.len() != self.input_dim() {
            return Err(Error::dim(format!("query of length {} for {}-dimensional model", xq.len(), self.input_dim())));
        }
        let q = DMatrix::from_row_slice(1, xq.len(), xq.as_slice());
        self.outputs
            .iter()
            .map(|o| {
                let inv_ell = o.hp.length_scales().map(|l| 1.0 / l);
                let ks = se_cross(&self.inputs, &q, &inv_ell, o.hp.signal_var()).column(0).into_owned();
                let mean = ks.dot(&o.beta);
                let v = o.chol.l().solve_lower_triangular(&ks).expect("triangular factor");
                let sf2 = o.hp.signal_var();
                let var = sf2 - v.dot(&v);
                if var < -1e-10 * sf2 {
                    return Err(Error::NonFinite(format!("negative predictive variance {var:e}")));
                }
                Ok(PointPrediction { mean, var: var.max(0.0) })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            inputs: rows_of(&self.inputs),
            targets: rows_of(&self.targets),
            hyperparams: self.hyperparams(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format {} v{}", file.format, file.version)));
        }
        let inputs = matrix_from_rows(&file.inputs, "input")?;
        let targets = matrix_from_rows(&file.targets, "target")?;
        Self::new(inputs, targets, file.hyperparams)
    }
}

/// Bounds of the log-hyperparameter search box; outside it the objective is `+∞`.
fn inside_box(log: &DVector<f64>) -> bool {
    let d = log.len() - 2;
    let (lsf, lsw) = (log[d], log[d + 1]);
    log.iter().all(|v| v.abs() <= 12.0) && lsw >= lsf - 9.0
}

fn negative_evidence(inputs: &DMatrix<f64>, y: &DVector<f64>, log: &DVector<f64>) -> (f64, DVector<f64>) {
    if !inside_box(log) {
        return (f64::INFINITY, DVector::zeros(log.len()));
    }
    match GpHyperparams::from_log(log.clone()).and_then(|hp| log_evidence(inputs, y, &hp)) {
        Ok((v, g)) => (-v, -g),
        Err(_) => (f64::INFINITY, DVector::zeros(log.len())),
    }
}

/// Log marginal likelihood `log N(y | 0, K + σ_w² I)` and its gradient with respect to the
/// log hyperparameters `[log ℓ, log σ_f, log σ_w]`.
pub fn log_evidence(inputs: &DMatrix<f64>, y: &DVector<f64>, hp: &GpHyperparams) -> Result<(f64, DVector<f64>)> {
    let n = inputs.nrows();
    let d = inputs.ncols();
    if y.len() != n || hp.dim() != d {
        return Err(Error::dim("evidence inputs, targets and hyperparameters disagree"));
    }
    let ell = hp.length_scales();
    let inv_ell = ell.map(|l| 1.0 / l);
    let sf2 = hp.signal_var();
    let sw2 = hp.noise_var();
    let kse = se_cross(inputs, inputs, &inv_ell, sf2);
    let mut k = kse.clone();
    for i in 0..n {
        k[(i, i)] += sw2;
    }
    let (chol, _) = linalg::cholesky_with_jitter(&k, 0)?;
    let alpha = chol.solve(y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * linalg::log_det(&chol) - 0.5 * n as f64 * (2.0 * PI).ln();
    // W = ααᵀ − K⁻¹, d value = ½ tr(W dK)
    let mut w = chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let mut grad = DVector::zeros(d + 2);
    for j in 0..n {
        for i in 0..n {
            let wk = w[(i, j)] * kse[(i, j)];
            if wk == 0.0 {
                continue;
            }
            for c in 0..d {
                let t = (inputs[(i, c)] - inputs[(j, c)]) * inv_ell[c];
                grad[c] += 0.5 * wk * t * t;
            }
            grad[d] += wk;
        }
    }
    grad[d + 1] = sw2 * w.trace();
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{fd_jacobian, max_rel_err};
    use rand_distr::StandardNormal;

    fn random_problem(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0f64..2.0));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)].sin() + 0.1 * rng.sample::<f64, _>(StandardNormal));
        (x, y)
    }

    #[test]
    fn kernel_basic_values() {
        let hp = GpHyperparams::new(&[1.0, 2.0], 1.5, 0.1).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        assert!((se_kernel(&x, &x, &hp, false).unwrap() - 1.5).abs() < 1e-14);
        assert!((se_kernel(&x, &x, &hp, true).unwrap() - 1.6).abs() < 1e-14);
        let mut last = f64::INFINITY;
        for t in 0..20 {
            let far = &x + DVector::from_vec(vec![t as f64, t as f64]);
            let v = se_kernel(&x, &far, &hp, false).unwrap();
            assert!(v <= last);
            last = v;
        }
        assert!(last < 1e-20);
        assert!(se_kernel(&DVector::zeros(3), &x, &hp, false).is_err());
    }

    #[test]
    fn evidence_gradient_matches_finite_differences() {
        for (seed, d) in [(1, 1), (2, 2), (3, 3)] {
            let (x, y) = random_problem(seed, 25, d);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let log = DVector::from_fn(d + 2, |i, _| if i == d + 1 { -1.5 } else { rng.gen_range(-0.5..0.5) });
            let hp = GpHyperparams::from_log(log.clone()).unwrap();
            let (_, g) = log_evidence(&x, &y, &hp).unwrap();
            let num = fd_jacobian(
                |l| {
                    let hp = GpHyperparams::from_log(l.clone()).unwrap();
                    DVector::from_element(1, log_evidence(&x, &y, &hp).unwrap().0)
                },
                &log,
                1e-4,
            );
            let err = max_rel_err(&DMatrix::from_row_slice(1, d + 2, g.as_slice()), &num, 1e-8);
            assert!(err < 1e-5, "d={d}: {err}");
        }
    }

    #[test]
    fn single_point_evidence_is_gaussian_density() {
        let x = DMatrix::from_element(1, 1, 0.4);
        let y = DVector::from_element(1, 0.7);
        let hp = GpHyperparams::new(&[1.0], 2.0, 0.5).unwrap();
        let (v, _) = log_evidence(&x, &y, &hp).unwrap();
        let var = 2.5 * (1.0 + 1e-10);
        let expect = -0.5 * (2.0 * PI * var).ln() - 0.5 * 0.49 / var;
        assert!((v - expect).abs() < 1e-9);
    }

    #[test]
    fn two_point_prediction_matches_hand_solve() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let hp = GpHyperparams::new(&[1.0], 1.0, 0.1).unwrap();
        let model = GpModel::new(x, y, vec![hp]).unwrap();
        let k01 = (-0.5f64).exp();
        let kq0 = (-0.5 * 0.25f64).exp();
        let kq1 = (-0.5 * 0.25f64).exp();
        let jit = 1e-10 * 1.1;
        let (a, b) = (1.1 + jit, k01);
        let det = a * a - b * b;
        let beta0 = (a * 1.0 - b * -1.0) / det;
        let beta1 = (a * -1.0 - b * 1.0) / det;
        let mean = kq0 * beta0 + kq1 * beta1;
        let quad = (a * (kq0 * kq0 + kq1 * kq1) - 2.0 * b * kq0 * kq1) / det;
        let p = model.predict_point(&DVector::from_element(1, 0.5)).unwrap()[0];
        assert!((p.mean - mean).abs() < 1e-12);
        assert!((p.var - (1.0 - quad)).abs() < 1e-12);
    }

    #[test]
    fn interpolation_and_far_field() {
        let (x, y) = random_problem(7, 20, 2);
        let hp = GpHyperparams::new(&[0.7, 0.9], 1.0, 1e-12).unwrap();
        let model = GpModel::new(x.clone(), DMatrix::from_column_slice(20, 1, y.as_slice()), vec![hp]).unwrap();
        for i in 0..20 {
            let p = model.predict_point(&x.row(i).transpose()).unwrap()[0];
            assert!((p.mean - y[i]).abs() < 1e-4, "{} vs {}", p.mean, y[i]);
            assert!(p.var < 1e-4);
        }
        let far = model.predict_point(&DVector::from_vec(vec![100.0, 100.0])).unwrap()[0];
        assert!(far.mean.abs() < 1e-12);
        assert!((far.var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_residual_is_small() {
        let (x, y) = random_problem(9, 30, 2);
        let hp = GpHyperparams::new(&[1.0, 1.0], 1.0, 0.01).unwrap();
        let model = GpModel::new(x, DMatrix::from_column_slice(30, 1, y.as_slice()), vec![hp]).unwrap();
        assert!(model.beta_residual(0) < 1e-8);
    }

    #[test]
    fn fit_improves_evidence_and_is_deterministic() {
        let (x, y) = random_problem(11, 40, 2);
        let t = DMatrix::from_column_slice(40, 1, y.as_slice());
        let init = GpModel::default_init(&x, &t).unwrap();
        let settings = FitSettings { restarts: 2, seed: 5, ..Default::default() };
        let m1 = GpModel::fit(x.clone(), t.clone(), Some(init.clone()), &settings).unwrap();
        let m2 = GpModel::fit(x.clone(), t.clone(), Some(init.clone()), &settings).unwrap();
        assert_eq!(m1.hyperparams(), m2.hyperparams());
        let e0 = log_evidence(&x, &y, &init[0]).unwrap().0;
        let e1 = log_evidence(&x, &y, &m1.hyperparams()[0]).unwrap().0;
        assert!(e1 >= e0);
    }

    #[test]
    fn fit_rejects_duplicates_and_tiny_sets() {
        let x = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(GpModel::fit(x, y, None, &FitSettings::default()), Err(Error::Domain(_))));
        let x = DMatrix::from_row_slice(1, 1, &[0.5]);
        let y = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(GpModel::fit(x, y, None, &FitSettings::default()).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let (x, y) = random_problem(13, 10, 2);
        let t = DMatrix::from_fn(10, 2, |i, j| y[i] * (j + 1) as f64);
        let hps = GpModel::default_init(&x, &t).unwrap();
        let model = GpModel::new(x, t, hps).unwrap();
        let back = GpModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back.inputs(), model.inputs());
        for (a, b) in back.hyperparams().iter().zip(model.hyperparams()) {
            assert!((a.log_params() - b.log_params()).amax() < 1e-12);
        }
        assert!(GpModel::from_json(&model.to_json().unwrap().replace("pilco-gp", "other")).is_err());
    }
}
