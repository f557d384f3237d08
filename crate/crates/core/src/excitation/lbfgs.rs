//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Stop when the objective improves by less than this (relative) per step.
    pub function_tolerance: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 8,
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            function_tolerance: 1e-9,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn direction(g: &DVector<f64>, hist: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

/// Minimizes `f`, which returns the value and gradient. Non-finite values
/// are treated as failed trial points. `on_iter(k, x, value)` runs after
/// every accepted step.
pub fn minimize<F, C>(mut f: F, x0: DVector<f64>, opts: &LbfgsOptions, mut on_iter: C) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    C: FnMut(usize, &DVector<f64>, f64),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut hist: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    if !fx.is_finite() {
        return LbfgsResult { x, value: fx, iterations };
    }
    while iterations < opts.max_iterations {
        if g.amax() < opts.gradient_tolerance {
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut d = if attempt == 0 { direction(&g, &hist) } else { -g.clone() };
            let mut slope = g.dot(&d);
            if !(slope < 0.0) {
                d = -g.clone();
                slope = -g.norm_squared();
            }
            let mut step = if hist.is_empty() || attempt > 0 { 1.0 / g.norm().max(1.0) } else { 1.0 };
            for _ in 0..opts.max_backtracks {
                let xn = &x + &d * step;
                let (fn_, gn) = f(&xn);
                if fn_.is_finite() && fn_ <= fx + opts.armijo * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() || hist.is_empty() {
                break;
            }
            hist.clear();
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        iterations += 1;
        on_iter(iterations, &x, fx);
        if improvement <= opts.function_tolerance * fx.abs().max(1.0) {
            break;
        }
    }
    LbfgsResult { x, value: fx, iterations }
}
