//! Quasi-Newton (BFGS) minimization with an optional box constraint.
//!
//! Unbounded problems use a strong-Wolfe line search. With bounds the step
//! is projected onto the box, components pinned at an active bound are held
//! fixed, and an Armijo backtracking search is used along the projected path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// A stop on objective stagnation counts as converged only when the
    /// gradient norm is also below this value.
    pub stall_grad_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-6, rel_tol: 1e-10, max_iter: 2000, stall_grad_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientNorm,
    ObjectiveStall,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizerResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// Per-coordinate `(lower, upper)` limits; use infinities for free sides.
pub type Bounds = [(f64, f64)];

/// Minimizes `objective`, which returns the value at `x` and writes the
/// gradient into its second argument.
pub fn minimize<F>(
    mut objective: F,
    start: &[f64],
    bounds: Option<&Bounds>,
    options: &MinimizeOptions,
) -> Result<MinimizerResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = start.len();
    if let Some(b) = bounds {
        if b.len() != n {
            return Err(Error::invalid(format!("{} bounds for {} parameters", b.len(), n)));
        }
        if b.iter().any(|(lo, hi)| lo > hi) {
            return Err(Error::invalid("lower bound above upper bound"));
        }
    }
    let mut x: Vec<f64> = start.to_vec();
    if let Some(b) = bounds {
        project(&mut x, b);
    }
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { iterations: 0, last_point: x });
    }

    let mut h = identity(n);
    let mut first_step = true;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    loop {
        let free = free_mask(&x, &g, bounds);
        let gnorm = masked_norm(&g, &free);
        if gnorm <= options.grad_tol {
            termination = Termination::GradientNorm;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }

        let mut d = direction(&h, &g, &free);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            h = identity(n);
            d = direction(&h, &g, &free);
            slope = dot(&g, &d);
        }
        let alpha0 = if first_step { (1.0 / norm(&d)).min(1.0) } else { 1.0 };

        let step = match bounds {
            None => wolfe_search(&mut objective, &x, f, slope, &d, alpha0),
            Some(b) => projected_search(&mut objective, &x, f, &g, &d, b, alpha0),
        };
        let Some(step) = step else {
            if !h_is_identity(&h) {
                // retry once along steepest descent
                h = identity(n);
                first_step = true;
                continue;
            }
            termination = Termination::LineSearchFailed;
            break;
        };
        if !step.value.is_finite() {
            return Err(Error::NonFiniteObjective { iterations, last_point: x });
        }
        iterations += 1;

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if first_step {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        first_step = false;

        let f_prev = f;
        x = step.x;
        f = step.value;
        g = step.grad;

        let scale = f_prev.abs().max(f.abs()).max(f64::MIN_POSITIVE);
        if (f_prev - f).abs() <= options.rel_tol * scale {
            let free = free_mask(&x, &g, bounds);
            termination = if masked_norm(&g, &free) <= options.grad_tol {
                Termination::GradientNorm
            } else {
                Termination::ObjectiveStall
            };
            break;
        }
    }

    let free = free_mask(&x, &g, bounds);
    let grad_norm = masked_norm(&g, &free);
    let converged = match termination {
        Termination::GradientNorm => true,
        Termination::ObjectiveStall | Termination::LineSearchFailed => grad_norm <= options.stall_grad_tol,
        Termination::MaxIterations => false,
    };
    Ok(MinimizerResult { x, value: f, grad_norm, iterations, converged, termination })
}

struct Step {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn wolfe_search<F>(objective: &mut F, x: &[f64], f0: f64, slope0: f64, d: &[f64], alpha0: f64) -> Option<Step>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut eval = |alpha: f64| -> (f64, f64, Step) {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let mut gt = vec![0.0; n];
        let ft = objective(&xt, &mut gt);
        let ft = if ft.is_finite() && gt.iter().all(|v| v.is_finite()) { ft } else { f64::INFINITY };
        let slope = dot(&gt, d);
        (ft, slope, Step { x: xt, value: ft, grad: gt })
    };

    let mut lo = (0.0, f0, slope0, None::<Step>);
    let mut alpha = alpha0;
    let mut hi: Option<(f64, f64, f64)> = None;
    for i in 0..40 {
        let (ft, st, step) = eval(alpha);
        if ft > f0 + C1 * alpha * slope0 || (i > 0 && ft >= lo.1) {
            hi = Some((alpha, ft, st));
            break;
        }
        if st.abs() <= -C2 * slope0 {
            return Some(step);
        }
        if st >= 0.0 {
            hi = Some((lo.0, lo.1, lo.2));
            lo = (alpha, ft, st, Some(step));
            break;
        }
        lo = (alpha, ft, st, Some(step));
        alpha *= 2.0;
        if alpha > 1e10 {
            return lo.3;
        }
    }
    let (mut a_hi, mut f_hi, mut s_hi) = hi?;

    for _ in 0..60 {
        let (a_lo, f_lo, s_lo) = (lo.0, lo.1, lo.2);
        let width = a_hi - a_lo;
        if width.abs() < 1e-16 * a_lo.abs().max(1e-16) {
            break;
        }
        let mut trial = if f_hi.is_finite() {
            cubic_min(a_lo, f_lo, s_lo, a_hi, f_hi, s_hi)
        } else {
            None
        }
        .unwrap_or(a_lo + 0.5 * width);
        let (l, u) = if a_lo < a_hi { (a_lo, a_hi) } else { (a_hi, a_lo) };
        let margin = 0.1 * (u - l);
        if !(trial > l + margin && trial < u - margin) {
            trial = 0.5 * (l + u);
        }
        let (ft, st, step) = eval(trial);
        if ft > f0 + C1 * trial * slope0 || ft >= f_lo {
            a_hi = trial;
            f_hi = ft;
            s_hi = st;
        } else {
            if st.abs() <= -C2 * slope0 {
                return Some(step);
            }
            if st * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
                s_hi = s_lo;
            }
            lo = (trial, ft, st, Some(step));
        }
    }
    // Sufficient decrease without the curvature condition is still progress.
    lo.3.filter(|s| s.value < f0)
}

fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> Option<f64> {
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = gb - ga + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = b - (b - a) * (gb + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

fn projected_search<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    g: &[f64],
    d: &[f64],
    bounds: &Bounds,
    alpha0: f64,
) -> Option<Step>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut alpha = alpha0;
    for _ in 0..60 {
        let mut xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        project(&mut xt, bounds);
        let decrease: f64 = g.iter().zip(xt.iter().zip(x)).map(|(gi, (a, b))| gi * (a - b)).sum();
        let mut gt = vec![0.0; n];
        let ft = objective(&xt, &mut gt);
        if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f0 + C1 * decrease && decrease < 0.0 {
            return Some(Step { x: xt, value: ft, grad: gt });
        }
        alpha *= 0.5;
    }
    None
}

fn project(x: &mut [f64], bounds: &Bounds) {
    for (xi, (lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(*lo, *hi);
    }
}

fn free_mask(x: &[f64], g: &[f64], bounds: Option<&Bounds>) -> Vec<bool> {
    match bounds {
        None => vec![true; x.len()],
        Some(b) => x
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&xi, &gi), &(lo, hi))| !((xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0)))
            .collect(),
    }
}

fn direction(h: &[f64], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
        })
        .collect()
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn h_is_identity(h: &[f64]) -> bool {
    let n = (h.len() as f64).sqrt() as usize;
    (0..n).all(|i| (0..n).all(|j| h[i * n + j] == if i == j { 1.0 } else { 0.0 }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn masked_norm(g: &[f64], free: &[bool]) -> f64 {
    g.iter().zip(free).filter(|(_, &f)| f).map(|(v, _)| v * v).sum::<f64>().sqrt()
}
