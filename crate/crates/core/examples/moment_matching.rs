//! Propagate a Gaussian input through a GP: exact moment matching, linearization, and a
//! Monte Carlo reference.

use nalgebra::{DMatrix, DVector};
use pilco::gaussian::GaussianBelief;
use pilco::gp::{GpHyperparams, GpModel};
use pilco::inference::{predict, InferenceMethod, ModelUncertainty};
use pilco::verify::{McMoments, MvnSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> pilco::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = DMatrix::from_fn(40, 1, |_, _| rng.gen_range(-4.0f64..4.0));
    let y = x.map(|v| v.sin() + 0.05 * rng.sample::<f64, _>(StandardNormal));
    let model = GpModel::fit(x, y, None, &Default::default())?;
    let hp: &GpHyperparams = model.outputs()[0].hyperparams();
    println!("fitted ell {:.3} sf2 {:.3} sn2 {:.2e}", hp.length_scales()[0], hp.signal_var(), hp.noise_var());

    for &(m, v) in &[(0.0, 0.01), (1.0, 0.3), (1.5, 1.5)] {
        let input = GaussianBelief::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v))?;
        let mm = predict(&model, &input, InferenceMethod::MomentMatch, ModelUncertainty::Bayesian)?;
        let lin = predict(&model, &input, InferenceMethod::Linearize, ModelUncertainty::Bayesian)?;

        let sampler = MvnSampler::new(input.mean().clone(), input.cov());
        let mut mc = McMoments::new(input.mean().clone(), mm.delta_mean.clone());
        for _ in 0..200_000 {
            let xs = sampler.sample(&mut rng);
            let p = &model.predict_point(&xs)?[0];
            let ys = p.mean + (p.var + hp.noise_var()).sqrt() * rng.sample::<f64, _>(StandardNormal);
            mc.push(&xs, &DVector::from_element(1, ys));
        }
        let est = mc.estimate();
        println!("input N({m}, {v})");
        println!("  moment match  mean {:+.4} var {:.4}", mm.delta_mean[0], mm.delta_cov[(0, 0)]);
        println!("  linearize     mean {:+.4} var {:.4}", lin.delta_mean[0], lin.delta_cov[(0, 0)]);
        println!("  monte carlo   mean {:+.4} var {:.4}", est.mean[0], est.cov[(0, 0)]);
    }
    Ok(())
}
