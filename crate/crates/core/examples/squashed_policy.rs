//! Bounded RBF and linear policies: parameter counts, point evaluation, and the predicted
//! control distribution for a Gaussian state compared with sampling.

use nalgebra::DVector;
use pilco::env::EnvSpec;
use pilco::policy::{squash, Policy};
use pilco::verify::MvnSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pilco::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in [EnvSpec::cartpole(), EnvSpec::double_pendulum()] {
        let n = if spec.plant.control_dim() == 1 { 50 } else { 100 };
        let init = spec.init_belief()?;
        let rbf = Policy::random_rbf(spec.augmentation(), n, spec.u_max_vector(), &init, 0.1, &mut rng)?;
        let lin = Policy::random_linear(spec.augmentation(), spec.u_max_vector(), &mut rng)?;
        println!("{} controls: RBF with {n} basis functions has {} parameters, linear has {}", spec.plant.control_dim(), rbf.num_params(), lin.num_params());
    }

    println!("\nsquash(z) = 9/8 sin z + 1/8 sin 3z");
    for z in [-3.0, -1.5, -0.5, 0.0, 0.5, 1.5, 3.0] {
        println!("  z {z:+.1} -> {:+.4}", squash(z));
    }

    let spec = EnvSpec::cartpole();
    let policy = Policy::random_rbf(spec.augmentation(), 20, spec.u_max_vector(), &spec.init_belief()?, 0.5, &mut rng)?;
    let state = spec.init_belief()?;
    let c = policy.control_moments(&state, false)?;
    let sampler = MvnSampler::new(state.mean().clone(), state.cov());
    let draws: Vec<f64> = (0..100_000).map(|_| policy.evaluate(&sampler.sample(&mut rng)).map(|u| u[0])).collect::<pilco::Result<_>>()?;
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    // The squash stage treats the preliminary control as Gaussian, so sampling differs a little.
    println!("\ncontrol at the initial state distribution");
    println!("  predicted mean {:+.4} var {:.4}", c.u_mean[0], c.u_cov[(0, 0)]);
    println!("  sampled   mean {mean:+.4} var {var:.4}");
    println!("  cov[x, u] {:?}", DVector::from_column_slice(c.state_control_cross_cov.as_slice()).as_slice());
    Ok(())
}
