//! Expected saturating cost and its spread as the state uncertainty grows, near and far
//! from the target.

use nalgebra::{DMatrix, DVector};
use pilco::cost::{cost_std, expected_cost, CostConfig};
use pilco::gaussian::GaussianBelief;

fn main() -> pilco::Result<()> {
    let cfg = CostConfig::new(DVector::from_element(1, 0.0), 0.25)?;
    for mu in [0.0, 0.2, 1.0] {
        println!("mean distance {mu}");
        for v in [0.0, 0.01, 0.05, 0.2, 0.5] {
            let b = GaussianBelief::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, v))?;
            let c = expected_cost(&cfg, &b)?;
            let sd = cost_std(&cfg, &b)?;
            println!("  var {v:<5} E[c] {:.4}  sd {sd:.4}  E[c]-sd {:.4}", c.value, c.value - sd);
        }
    }
    Ok(())
}
