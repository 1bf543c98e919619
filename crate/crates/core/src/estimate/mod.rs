//! Maximum likelihood and Bayes estimators.

mod bayes;
mod closed_form;
mod optimizer;

pub use bayes::{bayes_estimate, importance_sampling_mean, BayesOptions, ImportanceCheck, PosteriorSummary, Prior};
pub use closed_form::{mle_linear_closed_form, mle_scaled_noise_closed_form, LinearFit, ScaledFit};
pub use optimizer::{maximize_box, LocalResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::IncrementEngine;
use crate::information::empirical_fisher;
use crate::likelihood::{objective, LogLikelihood};
use crate::model::{NoiseFamily, ParameterSpace, Theta};
use crate::numeric::halton;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleOptions {
    pub multistart: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub fast_path: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            multistart: 8,
            grad_tol: 1e-8,
            max_iter: 500,
            fast_path: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: Theta,
    pub log_lik_at_hat: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Number of starts that produced a local optimum.
    pub multistart_best_of: usize,
    /// From `(diag(T_n, n)·J)^{-1}` at `θ̂`; absent when `J` is singular there.
    pub stderr_diag: Option<Vec<f64>>,
    /// Largest sup-distance, in box widths, between `θ̂` and the other
    /// converged local optima.
    pub start_dispersion: f64,
    pub grad_norm: f64,
}

/// Start `k` of the deterministic multistart design: the box centre, then
/// Halton points mapped into the interior box.
pub fn start_point(space: &ParameterSpace, k: usize) -> Vec<f64> {
    let (lo, hi) = space.interior_limits();
    if k == 0 {
        return space.centre().to_flat();
    }
    halton(k as u64, lo.len())
        .iter()
        .enumerate()
        .map(|(j, u)| lo[j] + u * (hi[j] - lo[j]))
        .collect()
}

fn stderr_at(engine: &IncrementEngine, theta: &Theta) -> Option<Vec<f64>> {
    let m = engine.moments(theta).ok()?;
    empirical_fisher(&m, engine.grid()).ok()?.stderr_diag().ok()
}

/// Multistart projected BFGS over the interior box with an arbitrary objective.
pub fn maximize_multistart(obj: &dyn LogLikelihood, space: &ParameterSpace, opts: &MleOptions) -> Result<(LocalResult, usize, f64)> {
    if obj.dim() != space.dim() {
        return Err(Error::Shape(format!("objective has dimension {}, space {}", obj.dim(), space.dim())));
    }
    let (lo, hi) = space.interior_limits();
    let starts = opts.multistart.max(1);
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for k in 0..starts {
        match maximize_box(obj, &start_point(space, k), &lo, &hi, opts.grad_tol, opts.max_iter) {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(format!("start {k}: {e}")),
        }
    }
    if runs.is_empty() {
        return Err(Error::Optimization(format!("every start failed: {}", failures.join("; "))));
    }
    // ties resolve to the earliest start
    let best = runs
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.value > runs[b].value { i } else { b });
    let widths = space.widths();
    let dispersion = runs
        .iter()
        .filter(|r| r.converged)
        .map(|r| {
            r.x.iter()
                .zip(&runs[best].x)
                .zip(&widths)
                .map(|((a, b), w)| (a - b).abs() / w)
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let count = runs.len();
    Ok((runs.swap_remove(best), count, dispersion))
}

/// Numerical MLE: the maximiser of the exact log-likelihood over the
/// interior box.
pub fn mle_numeric(engine: &IncrementEngine, space: &ParameterSpace, y: &[f64], opts: &MleOptions) -> Result<EstimateResult> {
    engine.model().check_compatible(space)?;
    let obj = objective(engine, y, opts.fast_path)?;
    let (best, count, dispersion) = maximize_multistart(obj.as_ref(), space, opts)?;
    let mut flat = best.x;
    space.clamp_interior(&mut flat);
    let theta_hat = Theta::from_flat(&flat, space.p());
    Ok(EstimateResult {
        stderr_diag: stderr_at(engine, &theta_hat),
        theta_hat,
        log_lik_at_hat: best.value,
        converged: best.converged,
        iterations: best.iterations,
        multistart_best_of: count,
        start_dispersion: dispersion,
        grad_norm: best.grad_norm,
    })
}

/// Closed-form MLE for a linear signal with known or scaled noise. The
/// estimate is returned as computed, even outside the box.
pub fn mle_closed_form(engine: &IncrementEngine, y: &[f64]) -> Result<EstimateResult> {
    let (Some(design), Some(base)) = (engine.design(), engine.noise_base()) else {
        return Err(Error::Unsupported(format!(
            "closed form needs a linear signal with known or scaled noise, got {} / {}",
            engine.model().signal_name(),
            engine.model().noise_name()
        )));
    };
    let theta_hat = match engine.model().noise {
        NoiseFamily::Scaled(_) => {
            let fit = mle_scaled_noise_closed_form(design, base, y)?;
            Theta::new(fit.alpha_hat, vec![fit.beta_hat])
        }
        _ => Theta::new(mle_linear_closed_form(design, base, y)?.alpha_hat, vec![]),
    };
    let obj = objective(engine, y, true)?;
    let (value, grad) = obj.value_grad(&theta_hat.to_flat())?;
    Ok(EstimateResult {
        stderr_diag: stderr_at(engine, &theta_hat),
        theta_hat,
        log_lik_at_hat: value,
        converged: true,
        iterations: 0,
        multistart_best_of: 1,
        start_dispersion: 0.0,
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    })
}
