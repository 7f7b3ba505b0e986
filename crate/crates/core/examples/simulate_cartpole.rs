//! Simulate the cart-pole and double pendulum under random controls and check energy
//! conservation of the integrator.

use nalgebra::DVector;
use pilco::env::{run_episode, success, Controller, EnvSpec, Plant};

fn main() -> pilco::Result<()> {
    let spec = EnvSpec::cartpole();
    let ep = run_episode(&spec, &Controller::Random, 3)?;
    println!("{} steps of {} s, spec hash {}", ep.steps(), ep.dt, ep.spec_hash);
    for line in ep.to_tsv().lines().take(6) {
        println!("{line}");
    }
    println!("success: {}", success(&ep, &spec));

    // Energy is only conserved without cart friction.
    let mut frictionless = EnvSpec::cartpole();
    if let Plant::Cartpole { friction, .. } = &mut frictionless.plant {
        *friction = 0.0;
    }
    for spec in [frictionless, EnvSpec::double_pendulum()] {
        let plant = &spec.plant;
        let mut x = DVector::from_fn(plant.state_dim(), |i, _| 0.3 * (i as f64 + 1.0));
        let zero = DVector::zeros(plant.control_dim());
        let e0 = plant.energy(&x);
        for _ in 0..50 {
            x = spec.integrate(&x, &zero, spec.substeps);
        }
        println!("{plant:?}\n  energy drift over 5 s without control: {:.2e}", plant.energy(&x) - e0);
    }
    Ok(())
}
