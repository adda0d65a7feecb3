use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Length of the first trial step along the steepest-descent direction.
    pub step: f64,
    /// Upper bound on the Euclidean length of any trial step.
    pub clip: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop once an accepted step changes the objective by less than this
    /// relative amount.
    pub rel_tol: f64,
    /// Stop once the objective is at or below this value.
    pub abs_tol: f64,
    pub grad_tol: f64,
    /// Curvature pairs kept by the limited-memory direction; 0 gives plain
    /// gradient descent.
    pub memory: usize,
    /// Problems with at most this many parameters keep a dense inverse
    /// Hessian estimate instead of the limited-memory one.
    pub dense_limit: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 2000,
            step: 1e-2,
            clip: 0.5,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            rel_tol: 1e-12,
            abs_tol: 1e-24,
            grad_tol: 1e-16,
            memory: 10,
            dense_limit: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: &'static str,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|x| *x *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

fn dense_direction(h: &[f64], g: &[f64]) -> Vec<f64> {
    let m = g.len();
    (0..m).map(|i| -dot(&h[i * m..(i + 1) * m], g)).collect()
}

/// Inverse-Hessian BFGS update in place.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let m = s.len();
    let hy: Vec<f64> = (0..m).map(|i| dot(&h[i * m..(i + 1) * m], y)).collect();
    let yhy = dot(y, &hy);
    let a = (sy + yhy) / (sy * sy);
    for i in 0..m {
        let row = &mut h[i * m..(i + 1) * m];
        for j in 0..m {
            row[j] += a * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
        }
    }
}

/// Minimizes `f` from `x0`. `fg` returns the value and gradient, `f` the
/// value alone (used inside the line search); either may return `None` for
/// points outside the domain.
///
/// Every accepted step satisfies the Armijo condition and strictly lowers the
/// objective, so `trace` is strictly decreasing.
pub fn minimize<FG, F>(x0: Vec<f64>, fg: FG, f: F, cfg: &OptimizerConfig) -> Option<Outcome>
where
    FG: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut x = x0;
    let (mut fx, mut g) = fg(&x)?;
    let mut trace = vec![fx];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let dense = cfg.memory > 0 && x.len() <= cfg.dense_limit;
    let mut hess: Option<Vec<f64>> = None;
    let mut it = 0;
    let mut stop = "max iterations";
    let mut converged = false;
    if fx <= cfg.abs_tol {
        return Some(Outcome {
            x,
            f: fx,
            trace,
            iterations: 0,
            converged: true,
            stop_reason: "objective below tolerance",
        });
    }
    while it < cfg.max_iters {
        let gn = norm(&g);
        if !(gn > cfg.grad_tol) {
            stop = "gradient below tolerance";
            converged = true;
            break;
        }
        let mut d = match (&hess, mem.is_empty()) {
            (Some(h), _) => dense_direction(h, &g),
            (None, true) => g.iter().map(|v| -v).collect(),
            (None, false) => two_loop(&g, &mem),
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            mem.clear();
            hess = None;
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let dn = norm(&d);
        let fresh = mem.is_empty() && hess.is_none();
        let mut alpha = if fresh { cfg.step / dn } else { 1.0 };
        if alpha * dn > cfg.clip {
            alpha = cfg.clip / dn;
        }
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            if let Some(fnew) = f(&xn) {
                if fnew.is_finite() && fnew < fx && fnew <= fx + cfg.armijo * alpha * slope {
                    accepted = Some(xn);
                    break;
                }
            }
            alpha *= cfg.shrink;
        }
        let Some(xn) = accepted else {
            if !fresh {
                mem.clear();
                hess = None;
                continue;
            }
            stop = "line search stalled";
            converged = true;
            break;
        };
        let Some((fnew, gnew)) = fg(&xn) else {
            stop = "gradient evaluation failed";
            break;
        };
        it += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if dense && sy > 1e-12 * norm(&s) * norm(&y) {
            let h = hess.get_or_insert_with(|| {
                let gamma = sy / dot(&y, &y);
                let m = x.len();
                (0..m * m).map(|k| if k % (m + 1) == 0 { gamma } else { 0.0 }).collect()
            });
            bfgs_update(h, &s, &y, sy);
        } else if !dense && cfg.memory > 0 && sy > 1e-12 * norm(&s) * norm(&y) {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fnew) / fx.abs().max(f64::MIN_POSITIVE);
        x = xn;
        fx = fnew;
        g = gnew;
        trace.push(fx);
        if fx <= cfg.abs_tol {
            stop = "objective below tolerance";
            converged = true;
            break;
        }
        if rel < cfg.rel_tol {
            stop = "relative change below tolerance";
            converged = true;
            break;
        }
    }
    Some(Outcome {
        x,
        f: fx,
        trace,
        iterations: it,
        converged,
        stop_reason: stop,
    })
}
