//! Gaussian expectations of sines and cosines against Gauss-Hermite quadrature.

use pilco::gaussian::{trig_moments, trig_second_moments};
use pilco::verify::{gauss_hermite, gh_expectation};

fn main() -> pilco::Result<()> {
    let nodes = gauss_hermite(64);
    println!("{:>6} {:>6} {:>3} {:>14} {:>14} {:>10}", "mu", "var", "k", "E[sin kx]", "quadrature", "abs err");
    for &(mu, var) in &[(0.0, 0.1), (0.7, 0.5), (-2.0, 1.5), (3.1, 0.01)] {
        for k in 1..=3 {
            let (s, _) = trig_moments(mu, var, k)?;
            let q = gh_expectation(|x| (k as f64 * x).sin(), mu, var, &nodes);
            println!("{mu:>6.2} {var:>6.2} {k:>3} {s:>14.10} {q:>14.10} {:>10.2e}", (s - q).abs());
        }
        let (ss, cc, sc) = trig_second_moments(mu, var)?;
        println!("         E[sin²]={ss:.6} E[cos²]={cc:.6} E[sin cos]={sc:.6}  sum {:.12}", ss + cc);
    }
    Ok(())
}
