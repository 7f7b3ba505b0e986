//! Run every Monte Carlo oracle and finite-difference gradient suite at a small scale.

use pilco::harness::{grad_check, oracle_check, GradSubject, OracleSubject, MIN_ORACLE_SAMPLES};

fn main() -> pilco::Result<()> {
    let mut ok = true;
    for s in OracleSubject::ALL {
        let r = oracle_check(s, 3, MIN_ORACLE_SAMPLES, 1)?;
        println!("{r}");
        ok &= r.passed();
    }
    for s in GradSubject::ALL {
        let r = grad_check(s, 3, 1)?;
        println!("{r}");
        ok &= r.passed();
    }
    println!("{}", if ok { "all suites pass" } else { "some suites failed" });
    Ok(())
}
