//! Limited-memory BFGS minimizer with a strong-Wolfe line search.
//!
//! Objective errors and non-finite values are treated as `+inf`, so the line
//! search backs away from regions where the covariance stops factorizing.

use std::collections::VecDeque;

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LS: usize = 40;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

struct Eval {
    f: f64,
    g: Vec<f64>,
}

fn eval<F>(obj: &mut F, x: &[f64]) -> Eval
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    match obj(x) {
        Some((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Eval { f, g },
        _ => Eval {
            f: f64::INFINITY,
            g: vec![0.0; x.len()],
        },
    }
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, clamped to
/// the interior of the bracket.
fn interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    let bisect = 0.5 * (a + b);
    if !fb.is_finite() || !fa.is_finite() {
        return bisect;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    if t.is_finite() && t > lo + 0.1 * width && t < hi - 0.1 * width {
        t
    } else {
        bisect
    }
}

/// Strong-Wolfe line search along `d` from `x`. Returns the accepted step
/// and its evaluation, or `None` when no acceptable point was found.
fn line_search<F>(obj: &mut F, x: &[f64], f0: f64, g0: &[f64], d: &[f64], init: f64) -> Option<(f64, Eval)>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let dphi0 = dot(g0, d);
    if dphi0 >= 0.0 {
        return None;
    }
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = dphi0;
    let mut a = init;
    let mut best: Option<(f64, Eval)> = None;

    for i in 0..MAX_LS {
        let e = eval(obj, &axpy(x, a, d));
        let da = dot(&e.g, d);
        if e.f > f0 + C1 * a * dphi0 || (i > 0 && e.f >= f_prev) || !e.f.is_finite() {
            return zoom(obj, x, f0, dphi0, d, (a_prev, f_prev, d_prev), (a, e.f, da)).or(best);
        }
        if da.abs() <= -C2 * dphi0 {
            return Some((a, e));
        }
        if e.f < f0 {
            best = Some((a, Eval { f: e.f, g: e.g.clone() }));
        }
        if da >= 0.0 {
            return zoom(obj, x, f0, dphi0, d, (a, e.f, da), (a_prev, f_prev, d_prev)).or(best);
        }
        a_prev = a;
        f_prev = e.f;
        d_prev = da;
        a *= 2.0;
    }
    best
}

fn zoom<F>(
    obj: &mut F,
    x: &[f64],
    f0: f64,
    dphi0: f64,
    d: &[f64],
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
) -> Option<(f64, Eval)>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut best: Option<(f64, Eval)> = None;
    for _ in 0..MAX_LS {
        let a = interpolate(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
        let e = eval(obj, &axpy(x, a, d));
        let da = dot(&e.g, d);
        if e.f > f0 + C1 * a * dphi0 || e.f >= lo.1 || !e.f.is_finite() {
            hi = (a, e.f, da);
        } else {
            if da.abs() <= -C2 * dphi0 {
                return Some((a, e));
            }
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, e.f, da);
            best = Some((a, e));
        }
    }
    // Fall back to the best sufficient-decrease point seen.
    best.filter(|(_, e)| e.f < f0)
}

/// Minimizes `obj` from `x0`. `obj` returns `None` on evaluation failure.
pub fn minimize<F>(mut obj: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let start = eval(&mut obj, &x0);
    if !start.f.is_finite() {
        return None;
    }
    let mut x = x0;
    let mut f = start.f;
    let mut g = start.g;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged = norm(&g) < opts.tol;

    while !converged && iterations < opts.max_iters {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1.0 / norm(&g).max(1.0));
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            hist.clear();
            d = g.iter().map(|v| -v / norm(&g).max(1.0)).collect();
        }

        let step = line_search(&mut obj, &x, f, &g, &d, 1.0).or_else(|| {
            // retry once along steepest descent with memory dropped
            hist.clear();
            let sd: Vec<f64> = g.iter().map(|v| -v / norm(&g).max(1.0)).collect();
            d = sd;
            line_search(&mut obj, &x, f, &g, &d, 1.0)
        });
        let Some((a, e)) = step else {
            break;
        };
        iterations += 1;

        let x_new = axpy(&x, a, &d);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(n, o)| n - o).collect();
        let y: Vec<f64> = e.g.iter().zip(&g).map(|(n, o)| n - o).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let rel = (f - e.f).abs() / f.abs().max(e.f.abs()).max(1.0);
        x = x_new;
        f = e.f;
        g = e.g;
        converged = norm(&g) < opts.tol || rel < opts.tol;
    }
    Some(LbfgsResult {
        x,
        f,
        grad: g,
        iterations,
        converged,
    })
}
