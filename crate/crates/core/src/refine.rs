//! Least-squares refinement of the free constants of an expression.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{free_constants, with_constants, Expr};
use crate::numeric::{EvalPoint, Program};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Jittered starts in addition to the given constants.
    pub jitter_starts: usize,
    pub jitter_range: (f64, f64),
    pub memory: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> RefineConfig {
        RefineConfig {
            max_iter: 500,
            grad_tol: 1e-9,
            step_tol: 1e-12,
            jitter_starts: 3,
            jitter_range: (0.5, 2.0),
            memory: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementResult {
    pub expr: Expr,
    pub constants: Vec<f64>,
    pub initial_mse: f64,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// 0 for the given constants, k for the k-th jittered start.
    pub best_start: usize,
}

/// Mean squared error of `e` with constants `c` against `(points, target)`.
pub struct Objective<'a> {
    program: Program,
    points: &'a [EvalPoint],
    target: &'a [f64],
}

impl<'a> Objective<'a> {
    pub fn new(e: &Expr, points: &'a [EvalPoint], target: &'a [f64]) -> Objective<'a> {
        Objective { program: Program::compile_with_slots(e), points, target }
    }

    /// Non-finite or failing evaluations give `+inf`.
    pub fn value(&self, c: &[f64]) -> f64 {
        let mut stack = Vec::new();
        let mut sum = 0.0;
        for (p, t) in self.points.iter().zip(self.target) {
            match self.program.run(c, p.x, p.y, &mut stack) {
                Ok(v) => sum += (v - t) * (v - t),
                Err(_) => return f64::INFINITY,
            }
        }
        let mse = sum / self.points.len() as f64;
        if mse.is_finite() {
            mse
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&self, c: &[f64], f0: f64, bounds: &[(f64, f64)]) -> Vec<f64> {
        let mut probe = c.to_vec();
        (0..c.len())
            .map(|i| {
                let h = 1e-6 * (1.0 + c[i].abs());
                let (lo, hi) = bounds[i];
                probe[i] = (c[i] + h).min(hi);
                let fp = self.value(&probe);
                probe[i] = (c[i] - h).max(lo);
                let fm = self.value(&probe);
                let (xp, xm) = ((c[i] + h).min(hi), (c[i] - h).max(lo));
                probe[i] = c[i];
                match (fp.is_finite(), fm.is_finite()) {
                    (true, true) => (fp - fm) / (xp - xm),
                    (true, false) => (fp - f0) / (xp - c[i]),
                    (false, true) => (f0 - fm) / (c[i] - xm),
                    (false, false) => 0.0,
                }
            })
            .collect()
    }
}

pub fn default_bounds(c: &[f64]) -> Vec<(f64, f64)> {
    c.iter().map(|v| (v - 10.0 * (v.abs() + 1.0), v + 10.0 * (v.abs() + 1.0))).collect()
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gradient with components that push against an active bound removed.
fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((v, gi), (lo, hi))| if (*v <= *lo && *gi > 0.0) || (*v >= *hi && *gi < 0.0) { 0.0 } else { *gi })
        .collect()
}

struct Run {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

/// Projected L-BFGS with Armijo backtracking along the projected path.
fn minimize(obj: &Objective, start: Vec<f64>, bounds: &[(f64, f64)], cfg: &RefineConfig) -> Run {
    let mut x = start;
    project(&mut x, bounds);
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return Run { x, f, iterations: 0, converged: false };
    }
    let mut g = obj.gradient(&x, f, bounds);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for it in 0..cfg.max_iter {
        let pg = projected_gradient(&x, &g, bounds);
        if norm(&pg) <= cfg.grad_tol {
            return Run { x, f, iterations: it, converged: true };
        }
        // two-loop recursion on the free variables
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().zip(&pg).map(|(qi, p)| if *p == 0.0 { 0.0 } else { -qi }).collect();
        if dot(&d, &pg) >= 0.0 {
            history.clear();
            d = pg.iter().map(|p| -p).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, bounds);
            let ft = obj.value(&trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if ft.is_finite() && ft <= f + 1e-4 * dot(&g, &moved) {
                accepted = Some((trial, ft, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, s)) = accepted else {
            if history.is_empty() {
                return Run { x, f, iterations: it, converged: false };
            }
            history.clear();
            continue;
        };
        let gn = obj.gradient(&xn, fnew, bounds);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        let small_step = norm(&s) <= cfg.step_tol;
        x = xn;
        f = fnew;
        g = gn;
        if small_step {
            return Run { x, f, iterations: it + 1, converged: true };
        }
    }
    Run { x, f, iterations: cfg.max_iter, converged: false }
}

/// Fits the free constants of `e` to `target` on `points`. The result is
/// never worse than the input.
pub fn refine(e: &Expr, points: &[EvalPoint], target: &[f64], cfg: &RefineConfig) -> RefinementResult {
    let c0: Vec<f64> = free_constants(e).iter().map(|s| s.value).collect();
    let obj = Objective::new(e, points, target);
    let initial = obj.value(&c0);
    let unchanged = |converged: bool| RefinementResult {
        expr: e.clone(),
        constants: c0.clone(),
        initial_mse: initial,
        mse: initial,
        iterations: 0,
        converged,
        best_start: 0,
    };
    if c0.is_empty() {
        return unchanged(true);
    }
    if !initial.is_finite() {
        return unchanged(false);
    }
    let bounds = default_bounds(&c0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![c0.clone()];
    for _ in 0..cfg.jitter_starts {
        let (lo, hi) = cfg.jitter_range;
        starts.push(c0.iter().map(|v| v * rng.random_range(lo..=hi)).collect());
    }
    let runs: Vec<Run> = starts.into_par_iter().map(|s| minimize(&obj, s, &bounds, cfg)).collect();
    let (best_start, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    if !(best.f <= initial) {
        return unchanged(false);
    }
    RefinementResult {
        expr: with_constants(e, &best.x),
        constants: best.x,
        initial_mse: initial,
        mse: best.f,
        iterations: best.iterations,
        converged: best.converged,
        best_start,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn grid() -> Vec<EvalPoint> {
        (0..400).map(|k| EvalPoint::new(-1.0 + 0.1 * (k % 20) as f64, -1.0 + 0.1 * (k / 20) as f64)).collect()
    }

    #[test]
    fn no_slots_is_identity() {
        let e = parse("x*y").unwrap();
        let pts = grid();
        let target: Vec<f64> = pts.iter().map(|p| p.x).collect();
        let r = refine(&e, &pts, &target, &RefineConfig::default());
        assert_eq!(r.expr, e);
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn unevaluable_start_is_returned() {
        let e = parse("log(0.5*x)").unwrap();
        let pts = grid();
        let target = vec![0.0; pts.len()];
        let r = refine(&e, &pts, &target, &RefineConfig::default());
        assert_eq!(r.expr, e);
        assert!(!r.converged);
    }

    #[test]
    fn recovers_gaussian_width() {
        let truth = parse("1.7*exp(-0.8*(x**2 + y**2))").unwrap();
        let start = parse("1.4*exp(-0.95*(x**2 + y**2))").unwrap();
        let pts = grid();
        let target: Vec<f64> = pts.iter().map(|p| crate::numeric::eval(&truth, *p).unwrap()).collect();
        let r = refine(&start, &pts, &target, &RefineConfig::default());
        assert!((r.constants[0] - 1.7).abs() < 1e-6 && (r.constants[1] + 0.8).abs() < 1e-6, "{:?}", r.constants);
        assert!(r.mse <= r.initial_mse);
    }
}
