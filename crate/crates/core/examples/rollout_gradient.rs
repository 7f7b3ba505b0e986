//! Predicted long-term cost of a policy through a GP model and its analytic gradient,
//! checked against finite differences on a few parameters.

use pilco::harness::random_system;
use pilco::rollout::{objective, rollout, Propagation, Setup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pilco::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sys = random_system(&mut rng, 40, 6)?;
    let setup = Setup::new(&sys.model, &sys.policy, &sys.cost, Propagation::default())?;
    let horizon = 10;

    let report = rollout(&setup, &sys.init, horizon, true)?;
    print!("{}", report.to_tsv(0.1));
    let grad = report.grad.expect("gradient requested");
    println!("J = {:.6}, |dJ/dθ| = {:.4e} over {} parameters", report.total_cost, grad.norm(), grad.len());

    let theta = sys.policy.theta();
    let h = 1e-5;
    for i in [0, grad.len() / 2, grad.len() - 1] {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[i] += h;
        tm[i] -= h;
        let fd = (objective(&setup, &sys.init, horizon, &tp)?.0 - objective(&setup, &sys.init, horizon, &tm)?.0) / (2.0 * h);
        println!("θ[{i:>2}] analytic {:+.8e} central difference {fd:+.8e}", grad[i]);
    }
    Ok(())
}
