//! Fit a GP dynamics model to random cart-pole episodes and report hyperparameters and
//! held-out one-step prediction error.
//!
//! cargo run --release --example fit_dynamics_model -- [episodes]

use nalgebra::DMatrix;
use pilco::env::{run_episode, Controller, EnvSpec};
use pilco::gp::{log_evidence, FitSettings, GpModel};

fn stack(parts: &[(DMatrix<f64>, DMatrix<f64>)]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n: usize = parts.iter().map(|p| p.0.nrows()).sum();
    let (ci, ct) = (parts[0].0.ncols(), parts[0].1.ncols());
    let (mut x, mut y) = (DMatrix::zeros(n, ci), DMatrix::zeros(n, ct));
    let mut r = 0;
    for (a, b) in parts {
        x.rows_mut(r, a.nrows()).copy_from(a);
        y.rows_mut(r, b.nrows()).copy_from(b);
        r += a.nrows();
    }
    (x, y)
}

fn main() -> pilco::Result<()> {
    let episodes: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let spec = EnvSpec::cartpole();
    let train: Vec<_> = (0..episodes).map(|s| run_episode(&spec, &Controller::Random, s).map(|e| e.transitions())).collect::<pilco::Result<_>>()?;
    let (x, y) = stack(&train);
    let (xt, yt) = run_episode(&spec, &Controller::Random, 999)?.transitions();

    let model = GpModel::fit(x.clone(), y.clone(), None, &FitSettings::default())?;
    println!("{} training points", x.nrows());
    for (a, o) in model.outputs().iter().enumerate() {
        let hp = o.hyperparams();
        let ev = log_evidence(&x, &y.column(a).into_owned(), hp)?.0;
        println!(
            "output {a}: ell {:?} sf2 {:.3e} sn2 {:.3e} log evidence {ev:.2}",
            hp.length_scales().iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
            hp.signal_var(),
            hp.noise_var()
        );
    }
    let mut sq = vec![0.0; y.ncols()];
    for i in 0..xt.nrows() {
        let p = model.predict_point(&xt.row(i).transpose())?;
        for (a, pa) in p.iter().enumerate() {
            sq[a] += (pa.mean - yt[(i, a)]).powi(2);
        }
    }
    let var: Vec<f64> = (0..yt.ncols()).map(|a| yt.column(a).variance()).collect();
    for a in 0..yt.ncols() {
        println!("held-out output {a}: rmse {:.3e} (target sd {:.3e})", (sq[a] / xt.nrows() as f64).sqrt(), var[a].sqrt());
    }
    Ok(())
}
