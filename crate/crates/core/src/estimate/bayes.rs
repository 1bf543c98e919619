//! Posterior means by tensor Gauss–Legendre quadrature around the MLE, with
//! an importance-sampling cross-check.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EstimateResult;
use crate::error::{Error, Result};
use crate::increments::IncrementEngine;
use crate::information::empirical_fisher;
use crate::likelihood::{objective, LogLikelihood};
use crate::model::{Bound, ParameterSpace, Theta};
use crate::numeric::pairwise_sum;
use crate::quadrature::gauss_legendre;
use crate::rng::NormalStream;

/// Prior on the parameter box. Densities need not be normalised.
#[derive(Clone)]
pub enum Prior {
    Uniform,
    Density {
        name: String,
        density: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Uniform => write!(f, "Uniform"),
            Prior::Density { name, .. } => write!(f, "Density({name})"),
        }
    }
}

impl Prior {
    pub fn name(&self) -> String {
        match self {
            Prior::Uniform => "uniform".into(),
            Prior::Density { name, .. } => name.clone(),
        }
    }

    /// Density at a flat point; `1/vol(Θ)` for the uniform prior.
    pub fn density(&self, space: &ParameterSpace, x: &[f64]) -> Result<f64> {
        let v = match self {
            Prior::Uniform => 1.0 / space.volume(),
            Prior::Density { density, .. } => density(x),
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("prior density {v} at {x:?} is not a finite non-negative number")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesOptions {
    pub max_dim: usize,
    pub rel_tol: f64,
    /// Half-width of the integration window in asymptotic standard errors.
    pub window_sigmas: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
}

impl Default for BayesOptions {
    fn default() -> Self {
        Self {
            max_dim: 4,
            rel_tol: 1e-6,
            window_sigmas: 10.0,
            min_nodes: 8,
            max_nodes: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Theta,
    pub sd: Vec<f64>,
    /// Coordinate-wise medians of the quadrature marginals.
    pub median_proxy: Theta,
    pub anchor: Theta,
    pub window: Vec<Bound>,
    pub nodes_per_axis: usize,
    /// `ln ∫ L(θ)π(θ) dθ` over the window.
    pub log_evidence: f64,
    /// Largest change of the mean or sd at the last node refinement, relative
    /// to `max(|mean|, sd)`.
    pub max_change: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceCheck {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub ess: f64,
    pub draws: usize,
}

struct Pass {
    mean: Vec<f64>,
    sd: Vec<f64>,
    median: Vec<f64>,
    log_z: f64,
}

fn window(space: &ParameterSpace, anchor: &[f64], se: Option<&[f64]>, sigmas: f64) -> Vec<Bound> {
    space
        .bounds()
        .enumerate()
        .map(|(k, b)| match se {
            Some(se) if se[k].is_finite() && se[k] > 0.0 => {
                Bound::new((anchor[k] - sigmas * se[k]).max(b.lo), (anchor[k] + sigmas * se[k]).min(b.hi))
            }
            _ => *b,
        })
        .collect()
}

fn tensor_pass(
    obj: &dyn LogLikelihood,
    space: &ParameterSpace,
    prior: &Prior,
    win: &[Bound],
    m: usize,
    reference: f64,
) -> Result<Pass> {
    let d = win.len();
    let (x, w) = gauss_legendre(m);
    let nodes: Vec<Vec<f64>> = win.iter().map(|b| x.iter().map(|t| b.centre() + 0.5 * b.width() * t).collect()).collect();
    let weights: Vec<Vec<f64>> = win.iter().map(|b| w.iter().map(|v| 0.5 * b.width() * v).collect()).collect();
    let inner = m.pow(d as u32 - 1);
    // per chunk: [Z, Σwx_k, Σwx_k², marginal weights d×m]
    let width = 1 + 2 * d + d * m;
    let chunks: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i0| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; width];
            let mut idx = vec![0usize; d];
            let mut pt = vec![0.0; d];
            for r in 0..inner {
                idx[0] = i0;
                let mut rem = r;
                for k in 1..d {
                    idx[k] = rem % m;
                    rem /= m;
                }
                let mut wt = 1.0;
                for k in 0..d {
                    pt[k] = nodes[k][idx[k]];
                    wt *= weights[k][idx[k]];
                }
                let pw = prior.density(space, &pt)?;
                if pw == 0.0 {
                    continue;
                }
                let v = wt * pw * (obj.value(&pt)? - reference).exp();
                acc[0] += v;
                for k in 0..d {
                    acc[1 + k] += v * pt[k];
                    acc[1 + d + k] += v * pt[k] * pt[k];
                    acc[1 + 2 * d + k * m + idx[k]] += v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total: Vec<f64> = (0..width)
        .map(|c| pairwise_sum(&chunks.iter().map(|ch| ch[c]).collect::<Vec<_>>()))
        .collect();
    let z = total[0];
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::DegeneratePosterior);
    }
    let mean: Vec<f64> = (0..d).map(|k| total[1 + k] / z).collect();
    let sd: Vec<f64> = (0..d)
        .map(|k| (total[1 + d + k] / z - mean[k] * mean[k]).max(0.0).sqrt())
        .collect();
    // each node's mass is spread over its Gauss–Legendre cell
    let median = (0..d)
        .map(|k| {
            let marg = &total[1 + 2 * d + k * m..1 + 2 * d + (k + 1) * m];
            let mut cum = 0.0;
            let mut edge = win[k].lo;
            for j in 0..m {
                let next = cum + marg[j] / z;
                if next >= 0.5 && next > cum {
                    return edge + (0.5 - cum) / (next - cum) * weights[k][j];
                }
                cum = next;
                edge += weights[k][j];
            }
            win[k].hi
        })
        .collect();
    Ok(Pass {
        mean,
        sd,
        median,
        log_z: z.ln() + reference,
    })
}

/// Posterior mean under `prior`, anchored at the MLE `anchor`. The node
/// count per axis grows by half from `min_nodes` until mean and sd move by
/// less than `rel_tol` or `max_nodes` is reached.
pub fn bayes_estimate(
    engine: &IncrementEngine,
    space: &ParameterSpace,
    y: &[f64],
    prior: &Prior,
    opts: &BayesOptions,
    anchor: &EstimateResult,
) -> Result<PosteriorSummary> {
    let d = space.dim();
    if d > opts.max_dim {
        return Err(Error::DimensionGuard { dim: d, max: opts.max_dim });
    }
    if d == 0 {
        return Err(Error::Invalid("posterior over an empty parameter".into()));
    }
    engine.model().check_compatible(space)?;
    let obj = objective(engine, y, true)?;
    let a = anchor.theta_hat.to_flat();
    let win = window(space, &a, anchor.stderr_diag.as_deref(), opts.window_sigmas);
    let reference = obj.value(&a)?;
    let mut m = opts.min_nodes.max(2);
    let mut prev = tensor_pass(obj.as_ref(), space, prior, &win, m, reference)?;
    let mut change = f64::INFINITY;
    while m + m / 2 <= opts.max_nodes.max(opts.min_nodes) {
        m += m / 2;
        let next = tensor_pass(obj.as_ref(), space, prior, &win, m, reference)?;
        change = (0..d)
            .map(|k| {
                let scale = next.mean[k].abs().max(next.sd[k]).max(f64::MIN_POSITIVE);
                ((next.mean[k] - prev.mean[k]).abs().max((next.sd[k] - prev.sd[k]).abs())) / scale
            })
            .fold(0.0, f64::max);
        prev = next;
        if change <= opts.rel_tol {
            break;
        }
    }
    Ok(PosteriorSummary {
        mean: Theta::from_flat(&prev.mean, space.p()),
        sd: prev.sd,
        median_proxy: Theta::from_flat(&prev.median, space.p()),
        anchor: anchor.theta_hat.clone(),
        window: win,
        nodes_per_axis: m,
        log_evidence: prev.log_z,
        max_change: change,
        converged: change <= opts.rel_tol,
    })
}

/// Self-normalised importance sampling of the posterior mean with the
/// proposal `N(θ̂, inflate²·(diag(T_n, n)·J)^{-1})` at the anchor.
pub fn importance_sampling_mean(
    engine: &IncrementEngine,
    space: &ParameterSpace,
    y: &[f64],
    prior: &Prior,
    anchor: &Theta,
    draws: usize,
    seed: u64,
    inflate: f64,
) -> Result<ImportanceCheck> {
    let d = space.dim();
    let obj = objective(engine, y, true)?;
    let info = empirical_fisher(&engine.moments(anchor)?, engine.grid())?;
    let chol = &info.big_phi * inflate;
    let a = anchor.to_flat();
    let reference = obj.value(&a)?;
    let rows: Vec<(f64, Vec<f64>)> = (0..draws as u64)
        .into_par_iter()
        .map(|r| -> Result<(f64, Vec<f64>)> {
            let z = DVector::from_vec(NormalStream::take(seed, r, d));
            let x: Vec<f64> = (DVector::from_column_slice(&a) + &chol * &z).as_slice().to_vec();
            if !space.contains(&Theta::from_flat(&x, space.p())) {
                return Ok((0.0, x));
            }
            let pw = prior.density(space, &x)?;
            if pw == 0.0 {
                return Ok((0.0, x));
            }
            let lw = obj.value(&x)? - reference + 0.5 * z.norm_squared();
            Ok((pw * lw.exp(), x))
        })
        .collect::<Result<_>>()?;
    let ws: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let sw = pairwise_sum(&ws);
    if !(sw > 0.0) || !sw.is_finite() {
        return Err(Error::DegeneratePosterior);
    }
    let mean: Vec<f64> = (0..d)
        .map(|k| pairwise_sum(&rows.iter().map(|(w, x)| w * x[k]).collect::<Vec<_>>()) / sw)
        .collect();
    let se = (0..d)
        .map(|k| {
            let t: Vec<f64> = rows.iter().map(|(w, x)| (w * (x[k] - mean[k])).powi(2)).collect();
            pairwise_sum(&t).sqrt() / sw
        })
        .collect();
    let sw2 = pairwise_sum(&ws.iter().map(|w| w * w).collect::<Vec<_>>());
    Ok(ImportanceCheck {
        mean,
        se,
        ess: sw * sw / sw2,
        draws,
    })
}
