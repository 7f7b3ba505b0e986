//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Used for policy search and for evidence maximization of the GP hyperparameters. The
//! objective returns `(value, gradient)`; a non-finite value at a trial point is treated as
//! "step too long" and the line search backtracks, which lets callers encode box constraints
//! by returning `+∞` outside the box.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimSettings {
    pub max_iters: usize,
    /// Tolerance on the infinity norm of the gradient.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub history: usize,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings { max_iters: 150, grad_tol: 1e-6, c1: 1e-4, c2: 0.9, history: 10, max_line_search: 25 }
    }
}

impl OptimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "line search constants must satisfy 0 < c1 < c2 < 1 (got c1={}, c2={})",
                self.c1, self.c2
            )));
        }
        if self.history == 0 || self.max_line_search == 0 {
            return Err(Error::Config("history and max_line_search must be positive".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::Config("grad_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
}

struct Point {
    alpha: f64,
    f: f64,
    d: f64,
    g: DVector<f64>,
}

enum Search {
    Found(Point),
    Failed { non_finite: bool },
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a DVector<f64>,
    p: &'a DVector<f64>,
    f0: f64,
    d0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    evals: usize,
    saw_non_finite: bool,
}

impl<F: FnMut(&DVector<f64>) -> (f64, DVector<f64>)> LineSearch<'_, F> {
    fn eval(&mut self, alpha: f64) -> Point {
        self.evals += 1;
        let (f, g) = (self.f)(&(self.x + alpha * self.p));
        let ok = f.is_finite() && g.iter().all(|v| v.is_finite());
        if !ok {
            self.saw_non_finite = true;
            return Point { alpha, f: f64::INFINITY, d: f64::NAN, g };
        }
        let d = g.dot(self.p);
        Point { alpha, f, d, g }
    }

    fn armijo(&self, pt: &Point) -> bool {
        pt.f <= self.f0 + self.c1 * pt.alpha * self.d0
    }

    fn curvature(&self, pt: &Point) -> bool {
        pt.d.abs() <= -self.c2 * self.d0
    }

    fn run(&mut self, alpha1: f64) -> Search {
        let mut prev = Point { alpha: 0.0, f: self.f0, d: self.d0, g: DVector::zeros(0) };
        let mut alpha = alpha1;
        let mut first = true;
        while self.evals < self.budget {
            let pt = self.eval(alpha);
            if !self.armijo(&pt) || (!first && pt.f >= prev.f) {
                return self.zoom(prev, pt);
            }
            if self.curvature(&pt) {
                return Search::Found(pt);
            }
            if pt.d >= 0.0 {
                return self.zoom(pt, prev);
            }
            first = false;
            alpha = pt.alpha * 2.0;
            prev = pt;
        }
        self.best_effort(prev)
    }

    fn best_effort(&self, lo: Point) -> Search {
        if lo.alpha > 0.0 {
            Search::Found(lo)
        } else {
            Search::Failed { non_finite: self.saw_non_finite }
        }
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Search {
        while self.evals < self.budget {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= 1e-14 * b.max(1e-300) {
                break;
            }
            let mut alpha = if hi.f.is_finite() && lo.d.is_finite() && hi.d.is_finite() {
                cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b))
            } else {
                0.5 * (lo.alpha + hi.alpha)
            };
            if !(alpha > a + 0.1 * width && alpha < b - 0.1 * width) {
                alpha = 0.5 * (a + b);
            }
            let pt = self.eval(alpha);
            if !self.armijo(&pt) || pt.f >= lo.f {
                hi = pt;
            } else {
                if self.curvature(&pt) {
                    return Search::Found(pt);
                }
                if pt.d * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = pt;
            }
        }
        self.best_effort(lo)
    }
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_min(p0: &Point, p1: &Point) -> Option<f64> {
    let (a0, a1) = (p0.alpha, p1.alpha);
    let d1 = p0.d + p1.d - 3.0 * (p0.f - p1.f) / (a0 - a1);
    let disc = d1 * d1 - p0.d * p1.d;
    if disc < 0.0 {
        return None;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let denom = p1.d - p0.d + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = a1 - (a1 - a0) * (p1.d + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Minimize `f` from `x0`. The returned value is never larger than `f(x0)`.
pub fn minimize<F>(mut f: F, x0: &DVector<f64>, settings: &OptimSettings) -> Result<OptimResult>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    settings.validate()?;
    let mut x = x0.clone();
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    if g.len() != x.len() {
        return Err(Error::dim(format!("gradient length {} for {} variables", g.len(), x.len())));
    }
    let mut trace = vec![TraceEntry { iter: 0, value: fx, grad_norm: inf_norm(&g), step: 0.0 }];
    let mut memory: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut termination = Termination::MaxIterations;

    for iter in 1..=settings.max_iters {
        if inf_norm(&g) <= settings.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut p = two_loop(&g, &memory);
        let mut d0 = g.dot(&p);
        if !(d0 < 0.0) {
            memory.clear();
            p = -&g;
            d0 = g.dot(&p);
        }
        let alpha1 = if memory.is_empty() { (1.0 / p.norm()).min(1.0) } else { 1.0 };
        let mut ls = LineSearch {
            f: &mut f,
            x: &x,
            p: &p,
            f0: fx,
            d0,
            c1: settings.c1,
            c2: settings.c2,
            budget: settings.max_line_search,
            evals: 0,
            saw_non_finite: false,
        };
        let outcome = ls.run(alpha1);
        evaluations += ls.evals;
        let pt = match outcome {
            Search::Found(pt) => pt,
            Search::Failed { non_finite } => {
                if !memory.is_empty() {
                    // Retry once along steepest descent with fresh curvature information.
                    memory.clear();
                    continue;
                }
                termination = if non_finite { Termination::NonFinite } else { Termination::LineSearchFailed };
                break;
            }
        };
        let s = pt.alpha * &p;
        let y = &pt.g - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if memory.len() == settings.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x += pt.alpha * &p;
        fx = pt.f;
        g = pt.g;
        trace.push(TraceEntry { iter, value: fx, grad_norm: inf_norm(&g), step: pt.alpha });
        if iter == settings.max_iters && inf_norm(&g) <= settings.grad_tol {
            termination = Termination::GradientTolerance;
        }
    }
    Ok(OptimResult { x, value: fx, grad: g, termination, trace, evaluations })
}

fn two_loop(g: &DVector<f64>, memory: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
        (f, g)
    }

    #[test]
    fn quadratic_converges_to_origin() {
        let x0 = DVector::from_vec(vec![3.0, 4.0]);
        let r = minimize(|x| (0.5 * x.dot(x), x.clone()), &x0, &OptimSettings { grad_tol: 1e-10, ..Default::default() })
            .unwrap();
        assert!(r.x.norm() < 1e-8);
        assert_eq!(r.termination, Termination::GradientTolerance);
    }

    #[test]
    fn rosenbrock_within_200_iterations() {
        let x0 = DVector::from_vec(vec![-1.2, 1.0]);
        let settings = OptimSettings { max_iters: 200, grad_tol: 1e-9, ..Default::default() };
        let r = minimize(rosenbrock, &x0, &settings).unwrap();
        assert!(r.value <= 1e-8, "f = {}", r.value);
        assert!(r.trace.len() <= 201);
    }

    #[test]
    fn trace_is_monotone_and_reproducible() {
        let x0 = DVector::from_vec(vec![-1.2, 1.0]);
        let settings = OptimSettings::default();
        let a = minimize(rosenbrock, &x0, &settings).unwrap();
        let b = minimize(rosenbrock, &x0, &settings).unwrap();
        assert_eq!(a.trace, b.trace);
        for w in a.trace.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }

    #[test]
    fn infinite_region_is_avoided() {
        // Minimum of the unconstrained quadratic lies outside the finite region x < 1.
        let f = |x: &DVector<f64>| {
            if x[0] >= 1.0 {
                (f64::INFINITY, x.clone())
            } else {
                let v = 0.5 * (x[0] - 3.0).powi(2);
                (v, DVector::from_vec(vec![x[0] - 3.0]))
            }
        };
        let r = minimize(f, &DVector::from_vec(vec![0.0]), &OptimSettings::default()).unwrap();
        assert!(r.x[0] < 1.0 && r.value < 4.5);
    }

    #[test]
    fn nonfinite_start_is_an_error() {
        let r = minimize(|x| (f64::NAN, x.clone()), &DVector::from_vec(vec![1.0]), &OptimSettings::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn invalid_constants_rejected() {
        let s = OptimSettings { c1: 0.9, c2: 0.1, ..Default::default() };
        assert!(s.validate().is_err());
    }
}
