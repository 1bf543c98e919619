//! Projected BFGS ascent inside a box with Armijo backtracking.

use crate::error::{Error, Result};
use crate::likelihood::LogLikelihood;

#[derive(Clone, Debug)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Norm of the projected gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for k in 0..x.len() {
        x[k] = x[k].clamp(lo[k], hi[k]);
    }
}

// ascent direction components that would leave the box are dropped
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            if (x[k] <= lo[k] && g[k] < 0.0) || (x[k] >= hi[k] && g[k] > 0.0) {
                0.0
            } else {
                g[k]
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximises `obj` over `[lo, hi]` from `x0`. Fails only when `x0` itself
/// cannot be evaluated.
pub fn maximize_box(
    obj: &dyn LogLikelihood,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    grad_tol: f64,
    max_iter: usize,
) -> Result<LocalResult> {
    let d = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g) = obj.value_grad(&x)?;
    if !f.is_finite() {
        return Err(Error::Optimization(format!("objective is not finite at the start {x:?}")));
    }
    // inverse Hessian approximation of −Λ
    let mut h = vec![0.0; d * d];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..d {
            h[k * d + k] = scale;
        }
    };
    let widths: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
    let min_width = widths.iter().cloned().fold(f64::INFINITY, f64::min);
    let g0 = norm(&g).max(f64::MIN_POSITIVE);
    reset(&mut h, 0.1 * min_width / g0);
    let mut fresh = true;
    let mut iterations = 0;
    let mut pg = projected_gradient(&x, &g, lo, hi);
    while iterations < max_iter {
        if norm(&pg) < grad_tol {
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..d).map(|k| pg[k] != 0.0 || (x[k] > lo[k] && x[k] < hi[k])).collect();
        let mut dir = vec![0.0; d];
        for j in 0..d {
            if !free[j] {
                continue;
            }
            for k in 0..d {
                if free[k] {
                    dir[j] += h[j * d + k] * pg[k];
                }
            }
        }
        if dot(&dir, &pg) <= 0.0 {
            reset(&mut h, 0.1 * min_width / norm(&pg));
            fresh = true;
            dir = pg.iter().map(|v| v * h[0]).collect();
        }
        // keep the trial step inside a box-sized trust region
        let mut t = 1.0f64;
        for k in 0..d {
            if dir[k] != 0.0 {
                t = t.min(widths[k] / dir[k].abs());
            }
        }
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut xt: Vec<f64> = (0..d).map(|k| x[k] + t * dir[k]).collect();
            project(&mut xt, lo, hi);
            let s: Vec<f64> = (0..d).map(|k| xt[k] - x[k]).collect();
            if norm(&s) == 0.0 {
                break;
            }
            if let Ok((ft, gt)) = obj.value_grad(&xt) {
                if !ft.is_finite() {
                    t *= 0.5;
                    continue;
                }
                // once values differ only by round-off, a smaller projected gradient decides
                let flat = ft >= f - 16.0 * f64::EPSILON * f.abs().max(1.0)
                    && norm(&projected_gradient(&xt, &gt, lo, hi)) < norm(&pg);
                if ft >= f + ARMIJO_C * dot(&g, &s) || flat {
                    accepted = Some((xt, ft, gt, s));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn, s)) = accepted else {
            if fresh {
                break;
            }
            // retry once from a steepest-ascent model before giving up
            reset(&mut h, 0.1 * min_width / norm(&pg));
            fresh = true;
            continue;
        };
        // BFGS update for the minimisation of −Λ: y = −(g_new − g)
        let yv: Vec<f64> = (0..d).map(|k| g[k] - gn[k]).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if fresh {
                reset(&mut h, sy / dot(&yv, &yv));
            }
            let hy: Vec<f64> = (0..d).map(|j| (0..d).map(|k| h[j * d + k] * yv[k]).sum()).collect();
            let yhy = dot(&yv, &hy);
            let rho = 1.0 / sy;
            for j in 0..d {
                for k in 0..d {
                    h[j * d + k] += (1.0 + yhy * rho) * rho * s[j] * s[k] - rho * (hy[j] * s[k] + s[j] * hy[k]);
                }
            }
            fresh = false;
        }
        x = xn;
        f = fnew;
        g = gn;
        pg = projected_gradient(&x, &g, lo, hi);
    }
    let grad_norm = norm(&pg);
    Ok(LocalResult {
        x,
        value: f,
        grad_norm,
        iterations,
        converged: grad_norm < grad_tol,
    })
}
