//! Exact identities checked by simulation: the power-of-ratio expectation
//! and the convergence of the information sums to their periodic limits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::*;
use super::studies::stream_id;
use crate::error::{Error, Result};
use crate::increments::IncrementEngine;
use crate::information::{empirical_fisher, periodic_limit_fisher, InformationBundle, LimitRegime};
use crate::likelihood::{expected_power_identity, log_likelihood};
use crate::model::{ModelSpec, ParameterSpace, Theta};
use crate::sampling::TimeGrid;
use crate::simulate::draw_from_moments;
use crate::stats::log_mean_exp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerPair {
    pub theta: Theta,
    /// Raw displacement, compared point is `θ + μ`.
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerIdentityConfig {
    pub pairs: Vec<PowerPair>,
    pub z: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

fn default_batches() -> usize {
    20
}

fn default_sigmas() -> f64 {
    4.0
}

/// Compares the closed form of `ln E_θ[exp(z(Λ_n(θ+μ) − Λ_n(θ)))]` with the
/// Monte Carlo log-mean for every pair and every `z`.
pub fn power_identity_check(engine: &IncrementEngine, space: &ParameterSpace, cfg: &PowerIdentityConfig) -> Result<StudyReport> {
    if cfg.pairs.is_empty() || cfg.z.is_empty() {
        return Err(Error::config("pairs", "at least one pair and one z are needed"));
    }
    if cfg.replicates < 100 {
        return Err(Error::config("replicates", format!("{} is below the minimum of 100", cfg.replicates)));
    }
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (pi, pair) in cfg.pairs.iter().enumerate() {
        let moved = pair.theta.shifted(&pair.mu);
        let closed: Vec<f64> = cfg
            .z
            .iter()
            .map(|&z| expected_power_identity(engine, space, &pair.theta, &pair.mu, z))
            .collect::<Result<_>>()?;
        let a = engine.moments(&pair.theta)?;
        let b = engine.moments(&moved)?;
        let ratios: Vec<f64> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let y = draw_from_moments(&a, cfg.seed, stream_id(0, pi, r));
                Ok(log_likelihood(&b, &y)? - log_likelihood(&a, &y)?)
            })
            .collect::<Result<_>>()?;
        for (zi, &z) in cfg.z.iter().enumerate() {
            let scaled: Vec<f64> = ratios.iter().map(|l| z * l).collect();
            let mc = log_mean_exp(&scaled, cfg.batches);
            let dev = (closed[zi] - mc.value) / mc.se;
            checks.push(Check::new(
                format!("pair{pi} z={z} closed form vs MC"),
                (closed[zi] - mc.value).abs() <= cfg.sigmas * mc.se,
                format!("closed {:.6}, MC {:.6} ± {:.6} ({dev:.2} SE)", closed[zi], mc.value, mc.se),
            ));
            rows.push(PowerRow {
                pair: pi,
                z,
                closed_form: closed[zi],
                monte_carlo: mc,
                deviation_in_se: dev,
            });
        }
    }
    Ok(StudyReport {
        study: StudyKind::PowerIdentity,
        seed: cfg.seed,
        replicates: cfg.replicates,
        ladder: vec![engine.grid().n()],
        checks,
        tables: Tables::PowerIdentity {
            n: engine.grid().n(),
            rows,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherConvergenceConfig {
    pub theta: Theta,
    pub period: f64,
    /// Steps `h = period/k` for each `k`.
    pub divisions: Vec<usize>,
    /// Periods covered by each uniform grid.
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    /// Optional fixed pattern checked against its one-period sum.
    #[serde(default)]
    pub pattern: Option<Vec<f64>>,
    #[serde(default = "default_pattern_cycles")]
    pub pattern_cycles: usize,
    #[serde(default = "default_final_tol")]
    pub final_tol: f64,
    #[serde(default = "default_pattern_tol")]
    pub pattern_tol: f64,
}

fn default_cycles() -> usize {
    1
}

fn default_pattern_cycles() -> usize {
    25
}

fn default_final_tol() -> f64 {
    0.01
}

fn default_pattern_tol() -> f64 {
    1e-12
}

/// `max|J_a − J_b| / max|J_b|` over the block-diagonal information.
pub fn information_rel_error(a: &InformationBundle, b: &InformationBundle) -> f64 {
    let (ja, jb) = (a.j_theta(), b.j_theta());
    let scale = jb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (ja - jb).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
}

/// Empirical information on `h = P/k` grids against the `h → 0` limit, and
/// a repeated pattern against its one-period sum.
pub fn fisher_convergence_study(model: &ModelSpec, cfg: &FisherConvergenceConfig) -> Result<StudyReport> {
    if cfg.divisions.is_empty() || cfg.divisions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("divisions", "must be non-empty and strictly increasing"));
    }
    if cfg.cycles == 0 || cfg.pattern_cycles == 0 {
        return Err(Error::config("cycles", "must be positive"));
    }
    let limit = periodic_limit_fisher(model, &cfg.theta, cfg.period, &LimitRegime::HToZero)?;
    let mut rows = Vec::new();
    for &k in &cfg.divisions {
        let h = cfg.period / k as f64;
        let grid = TimeGrid::uniform(k * cfg.cycles, h)?;
        let emp = empirical_fisher(&IncrementEngine::new(model, &grid)?.moments(&cfg.theta)?, &grid)?;
        rows.push(FisherRow {
            divisions: k,
            h,
            rel_error: information_rel_error(&emp, &limit),
        });
    }
    let errs: Vec<f64> = rows.iter().map(|r| r.rel_error).collect();
    let mut checks = vec![
        Check::new(
            "information error strictly decreasing in h",
            errs.windows(2).all(|w| w[1] < w[0]),
            format!("{errs:?}"),
        ),
        Check::new(
            "final information error",
            *errs.last().unwrap() < cfg.final_tol,
            format!("{:.3e} (limit {:e})", errs.last().unwrap(), cfg.final_tol),
        ),
    ];
    let pattern_rel_error = match &cfg.pattern {
        Some(offsets) => {
            let regime = LimitRegime::Pattern { offsets: offsets.clone() };
            let one = periodic_limit_fisher(model, &cfg.theta, cfg.period, &regime)?;
            let grid = TimeGrid::periodic_pattern(offsets, cfg.period, cfg.pattern_cycles)?;
            let emp = empirical_fisher(&IncrementEngine::new(model, &grid)?.moments(&cfg.theta)?, &grid)?;
            let e = information_rel_error(&emp, &one);
            checks.push(Check::new(
                "pattern information equals one-period sum",
                e <= cfg.pattern_tol,
                format!("{e:.3e} (limit {:e})", cfg.pattern_tol),
            ));
            Some(e)
        }
        None => None,
    };
    Ok(StudyReport {
        study: StudyKind::FisherConvergence,
        seed: 0,
        replicates: 0,
        ladder: cfg.divisions.clone(),
        checks,
        tables: Tables::FisherConvergence { rows, pattern_rel_error },
    })
}
