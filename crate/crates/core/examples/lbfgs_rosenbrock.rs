//! L-BFGS on the Rosenbrock function, printing the objective trace.

use nalgebra::DVector;
use pilco::optimizer::{minimize, OptimSettings};

fn main() -> pilco::Result<()> {
    let rosen = |x: &DVector<f64>| {
        let n = x.len();
        let mut f = 0.0;
        let mut g = DVector::zeros(n);
        for i in 0..n - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * x[i] * a - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        (f, g)
    };
    let x0 = DVector::from_fn(6, |i, _| if i % 2 == 0 { -1.2 } else { 1.0 });
    let res = minimize(rosen, &x0, &OptimSettings { max_iters: 500, grad_tol: 1e-10, ..Default::default() })?;
    for t in res.trace.iter().step_by(5) {
        println!("iter {:>3}  f {:.6e}  |g| {:.3e}  step {:.3e}", t.iter, t.value, t.grad_norm, t.step);
    }
    println!("{:?} after {} evaluations, x = {:.6?}", res.termination, res.evaluations, res.x.as_slice());
    Ok(())
}
