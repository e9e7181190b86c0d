//! Limited-memory BFGS with a bracketing/zoom Wolfe line search.
//!
//! Near convergence the objective differences drop below rounding level, so
//! the sufficient-decrease test also accepts the approximate Wolfe form
//! (function within `eps_f` of the start and a derivative-based decrease test).
//! Once the value stops decreasing for a while, a gradient below `sqrt(tol)`
//! is accepted as stationary at rounding level.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct InnerOptions {
    /// Stop when `|grad|_inf <= tol * max(1, |f|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions { tol: 1e-10, max_iter: 20_000, memory: 12 }
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
/// Accepted steps without a decrease before the value counts as stagnant.
const STALL: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point {
    alpha: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct Search<'a, F> {
    oracle: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    d0: f64,
    eps_f: f64,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Search<'_, F> {
    fn eval(&mut self, alpha: f64) -> Point {
        let x: Vec<f64> = self.x.iter().zip(self.dir).map(|(x, d)| x + alpha * d).collect();
        let mut g = vec![0.0; x.len()];
        let f = (self.oracle)(&x, &mut g);
        self.evaluations += 1;
        let d = if f.is_finite() { dot(&g, self.dir) } else { f64::NAN };
        Point { alpha, f, d, x, g }
    }

    fn sufficient(&self, p: &Point) -> bool {
        p.f.is_finite()
            && (p.f <= self.f0 + C1 * p.alpha * self.d0
                || (p.f <= self.f0 + self.eps_f && p.d <= (2.0 * C1 - 1.0) * self.d0))
    }

    fn curvature(&self, p: &Point) -> bool {
        p.d.abs() <= -C2 * self.d0
    }

    fn run(&mut self, alpha0: f64) -> Option<Point> {
        let mut prev = Point { alpha: 0.0, f: self.f0, d: self.d0, x: self.x.to_vec(), g: Vec::new() };
        let mut alpha = alpha0;
        for i in 0..40 {
            let cur = self.eval(alpha);
            if !self.sufficient(&cur) || (i > 0 && cur.f > prev.f + self.eps_f) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.d >= 0.0 {
                return self.zoom(cur, prev);
            }
            alpha *= 4.0;
            prev = cur;
        }
        (prev.alpha > 0.0).then_some(prev)
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        for _ in 0..60 {
            let alpha = interpolate(&lo, &hi);
            let cur = self.eval(alpha);
            if !self.sufficient(&cur) || cur.f > lo.f + self.eps_f {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
            if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(hi.alpha.abs()) {
                break;
            }
        }
        (lo.alpha > 0.0 && lo.f <= self.f0 + self.eps_f).then_some(lo)
    }
}

/// Safeguarded cubic interpolation between two bracket ends; bisection fallback.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !(hi.f.is_finite() && hi.d.is_finite() && lo.d.is_finite()) {
        return mid;
    }
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.d * hi.d;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    let (l, u) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (u - l);
    if t.is_finite() && t > l + margin && t < u - margin {
        t
    } else {
        mid
    }
}

/// Minimizes `oracle` from `x0`. The oracle writes the gradient into its
/// second argument and returns the value; non-finite values are treated as
/// "step too long".
pub fn inner_minimize<F>(oracle: F, x0: Vec<f64>, opts: &InnerOptions) -> InnerResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    inner_minimize_preconditioned(oracle, x0, opts, None::<&fn(&[f64]) -> Vec<f64>>)
}

/// As [`inner_minimize`], with `precond` applying an approximate inverse
/// Hessian (symmetric positive definite) as the initial L-BFGS matrix.
pub fn inner_minimize_preconditioned<F, P>(mut oracle: F, x0: Vec<f64>, opts: &InnerOptions, precond: Option<&P>) -> InnerResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let apply = |v: &[f64]| -> Vec<f64> {
        match precond {
            Some(p) => p(v),
            None => v.to_vec(),
        }
    };
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = oracle(&x, &mut g);
    let mut evaluations = 1;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut fresh = true;
    let mut iterations = 0;
    let mut best = f;
    let mut stalled = 0;
    loop {
        let grad_inf = inf_norm(&g);
        let fscale = f.abs().max(1.0);
        if grad_inf <= opts.tol * fscale || (stalled >= STALL && grad_inf <= opts.tol.sqrt() * fscale) {
            return InnerResult { x, value: f, grad_inf, iterations, evaluations, converged: true };
        }
        if iterations >= opts.max_iter || !f.is_finite() || stalled >= 5 * STALL {
            return InnerResult { x, value: f, grad_inf, iterations, evaluations, converged: false };
        }
        let dir = two_loop(&g, &memory, &apply);
        let mut d0 = dot(&g, &dir);
        let dir = if d0 < 0.0 && d0.is_finite() {
            dir
        } else {
            memory.clear();
            fresh = true;
            let pg = apply(&g);
            d0 = -dot(&g, &pg);
            pg.iter().map(|v| -v).collect()
        };
        let alpha0 = match (fresh, precond.is_some()) {
            (false, _) => 1.0,
            (true, false) => 1.0 / dot(&dir, &dir).sqrt(),
            // the preconditioner may be badly scaled; cap the first move at unit size
            (true, true) => 1.0f64.min(1.0 / inf_norm(&dir)),
        };
        let eps_f = 1e-12 * f.abs();
        let mut search = Search { oracle: &mut oracle, x: &x, dir: &dir, f0: f, d0, eps_f, evaluations: 0 };
        let step = search.run(alpha0);
        evaluations += search.evaluations;
        iterations += 1;
        match step {
            Some(p) => {
                let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-300 && sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                    if memory.len() == opts.memory {
                        memory.pop_front();
                    }
                    memory.push_back((s, y, 1.0 / sy));
                }
                if p.f < best - 1e-15 * best.abs() {
                    best = p.f;
                    stalled = 0;
                } else {
                    stalled += 1;
                }
                x = p.x;
                g = p.g;
                f = p.f;
                fresh = memory.is_empty();
            }
            None if !fresh => {
                memory.clear();
                fresh = true;
            }
            None => {
                let grad_inf = inf_norm(&g);
                return InnerResult { x, value: f, grad_inf, iterations, evaluations, converged: false };
            }
        }
    }
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, apply: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let mut q = apply(&q);
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, &apply(y));
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
