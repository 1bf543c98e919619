//! Monte Carlo studies over an n-ladder: normality, rates, LAN and local
//! minimax risk.

use std::f64::consts::PI;

use libm::{erfc, lgamma};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{Estimator, Loss, StudyConfig};
use super::report::*;
use crate::error::{Error, Result};
use crate::estimate::{bayes_estimate, mle_closed_form, mle_numeric, PosteriorSummary};
use crate::increments::{IncrementEngine, IncrementMoments};
use crate::information::{InformationBundle, EIG_FLOOR};
use crate::likelihood::LanEvaluator;
use crate::model::Theta;
use crate::numeric::{pairwise_sum, spd_sqrt};
use crate::quadrature::gauss_legendre;
use crate::simulate::draw_from_moments;
use crate::stats::{batch_mean, batch_stat, ks_test, mean, normal_cdf, quantile, variance, weighted_slope, Est};

/// Stream id of replicate `rep` at ladder position `level` and lattice
/// point `point`.
pub fn stream_id(level: usize, point: usize, rep: usize) -> u64 {
    ((level as u64) << 48) | ((point as u64) << 32) | rep as u64
}

struct Level {
    engine: IncrementEngine,
    info: InformationBundle,
}

fn level(cfg: &StudyConfig, n: usize) -> Result<Level> {
    let grid = cfg.grid.grid(n)?;
    let engine = IncrementEngine::new(&cfg.model, &grid)?;
    let info = cfg.reference_info(&engine, &cfg.theta_true)?;
    Ok(Level { engine, info })
}

fn needs_mle(cfg: &StudyConfig) -> bool {
    cfg.estimators
        .iter()
        .any(|e| matches!(e, Estimator::Mle | Estimator::BayesMean | Estimator::BayesMedian))
}

fn needs_bayes(cfg: &StudyConfig) -> bool {
    cfg.estimators
        .iter()
        .any(|e| matches!(e, Estimator::BayesMean | Estimator::BayesMedian))
}

/// Every configured estimator on one sample, `None` for a failure.
pub(crate) fn run_estimators(cfg: &StudyConfig, engine: &IncrementEngine, y: &[f64]) -> Vec<Option<Vec<f64>>> {
    let mle = if needs_mle(cfg) {
        mle_numeric(engine, &cfg.space, y, &cfg.mle).ok()
    } else {
        None
    };
    let post: Option<PosteriorSummary> = if needs_bayes(cfg) {
        mle.as_ref()
            .and_then(|a| bayes_estimate(engine, &cfg.space, y, &cfg.prior, &cfg.bayes, a).ok())
            .filter(|p| p.converged)
    } else {
        None
    };
    cfg.estimators
        .iter()
        .map(|e| match e {
            Estimator::Mle => mle.as_ref().filter(|r| r.converged).map(|r| r.theta_hat.to_flat()),
            Estimator::MleClosed => mle_closed_form(engine, y).ok().map(|r| r.theta_hat.to_flat()),
            Estimator::BayesMean => post.as_ref().map(|p| p.mean.to_flat()),
            Estimator::BayesMedian => post.as_ref().map(|p| p.median_proxy.to_flat()),
        })
        .collect()
}

/// `replicates × estimators` outcomes for samples drawn from `moments`.
fn replicate_estimates(
    cfg: &StudyConfig,
    engine: &IncrementEngine,
    moments: &IncrementMoments,
    level_index: usize,
    point: usize,
) -> Vec<Vec<Option<Vec<f64>>>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let y = draw_from_moments(moments, cfg.seed, stream_id(level_index, point, r));
            run_estimators(cfg, engine, &y)
        })
        .collect()
}

/// Successful normalised errors `rates ∘ (θ̂ − θ)` of estimator `e`, and
/// the failure count.
fn normalised_errors(
    outcomes: &[Vec<Option<Vec<f64>>>],
    e: usize,
    theta: &[f64],
    rates: &[f64],
) -> (Vec<Vec<f64>>, usize) {
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for o in outcomes {
        match &o[e] {
            Some(x) => rows.push((0..theta.len()).map(|k| rates[k] * (x[k] - theta[k])).collect()),
            None => failures += 1,
        }
    }
    (rows, failures)
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

fn cov_entry(rows: &[Vec<f64>], j: usize, k: usize) -> f64 {
    let a = column(rows, j);
    let b = column(rows, k);
    let (ma, mb) = (mean(&a), mean(&b));
    let t: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    pairwise_sum(&t) / (rows.len() as f64 - 1.0)
}

fn failure_check(checks: &mut Vec<Check>, cfg: &StudyConfig, n: usize, est: &str, failures: usize, total: usize) {
    let rate = failures as f64 / total as f64;
    checks.push(Check::new(
        format!("n={n} {est} failure rate"),
        rate <= cfg.criteria.max_failure_rate,
        format!("{failures}/{total} failed (limit {})", cfg.criteria.max_failure_rate),
    ));
}

fn too_few(rows: &[Vec<f64>], batches: usize) -> Result<()> {
    if rows.len() < batches.max(3) {
        return Err(Error::Optimization(format!("only {} successful replicates", rows.len())));
    }
    Ok(())
}

/// Normalised-error distribution at each `n`: bias, RMSE, covariance
/// against `(J^(θ))⁻¹`, marginal and whitened KS.
pub fn normality_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let theta = cfg.theta_true.to_flat();
    let d = theta.len();
    let n_max = *cfg.ladder.last().unwrap();
    let mut cells = Vec::new();
    let mut checks = Vec::new();
    for (li, &n) in cfg.ladder.iter().enumerate() {
        let lv = level(cfg, n)?;
        let moments = lv.engine.moments(&cfg.theta_true)?;
        let outcomes = replicate_estimates(cfg, &lv.engine, &moments, li, 0);
        let rates = lv.info.rates();
        let target = lv.info.asymptotic_covariance()?;
        let root = spd_sqrt(&lv.info.j_theta(), EIG_FLOOR, "J")?;
        for (e, est) in cfg.estimators.iter().enumerate() {
            let (rows, failures) = normalised_errors(&outcomes, e, &theta, &rates);
            failure_check(&mut checks, cfg, n, est.name(), failures, cfg.replicates);
            if rows.len() < cfg.batches.max(3) {
                continue;
            }
            let whitened: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| (&root * DVector::from_column_slice(r)).as_slice().to_vec())
                .collect();
            let mut bias = Vec::new();
            let mut rmse = Vec::new();
            let mut ks_marginal = Vec::new();
            let mut whitened_variance = Vec::new();
            let mut ks_whitened = Vec::new();
            for k in 0..d {
                let col = column(&rows, k);
                let raw: Vec<f64> = col.iter().map(|v| v / rates[k]).collect();
                bias.push(batch_mean(&raw, cfg.batches));
                rmse.push(batch_stat(&raw, cfg.batches, |b| (b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64).sqrt()));
                let sd = target[(k, k)].sqrt();
                ks_marginal.push(ks_test(&col, |x| normal_cdf(x / sd)));
                let wc = column(&whitened, k);
                whitened_variance.push(batch_stat(&wc, cfg.batches, variance));
                ks_whitened.push(ks_test(&wc, normal_cdf));
            }
            let covariance: Vec<Vec<Est>> = (0..d)
                .map(|j| (0..d).map(|k| batch_stat(&rows, cfg.batches, |b| cov_entry(b, j, k))).collect())
                .collect();
            let scale = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let dev = (0..d)
                .flat_map(|j| (0..d).map(move |k| (j, k)))
                .map(|(j, k)| (covariance[j][k].value - target[(j, k)]).abs())
                .fold(0.0, f64::max)
                / scale;
            if let Some(level) = cfg.criteria.ks_level {
                for (k, r) in ks_whitened.iter().enumerate() {
                    checks.push(Check::new(
                        format!("n={n} {} whitened[{k}] KS", est.name()),
                        r.p_value >= level,
                        format!("D = {:.4}, p = {:.4} (level {level})", r.statistic, r.p_value),
                    ));
                }
            }
            if let Some(sig) = cfg.criteria.variance_sigmas {
                for (k, v) in whitened_variance.iter().enumerate() {
                    checks.push(Check::new(
                        format!("n={n} {} whitened[{k}] variance", est.name()),
                        v.within(1.0, sig),
                        format!("{:.4} ± {:.4}, target 1 within {sig} SE", v.value, v.se),
                    ));
                }
            }
            if let (Some(tol), true) = (cfg.criteria.cov_rel_tol, n == n_max) {
                checks.push(Check::new(
                    format!("n={n} {} covariance vs inverse information", est.name()),
                    dev <= tol,
                    format!("max-norm relative deviation {dev:.4} (limit {tol})"),
                ));
            }
            cells.push(NormalityCell {
                n,
                total_time: lv.engine.grid().total_time(),
                estimator: est.name().into(),
                failures,
                bias,
                rmse,
                covariance,
                target_covariance: (0..d).map(|j| (0..d).map(|k| target[(j, k)]).collect()).collect(),
                covariance_max_rel_dev: dev,
                ks_marginal,
                whitened_variance,
                ks_whitened,
            });
        }
    }
    Ok(StudyReport {
        study: StudyKind::Normality,
        seed: cfg.seed,
        replicates: cfg.replicates,
        ladder: cfg.ladder.clone(),
        checks,
        tables: Tables::Normality { cells },
    })
}

fn rmse_of(rows: &[Vec<f64>], range: std::ops::Range<usize>, batches: usize) -> Est {
    batch_stat(rows, batches, |b| {
        let s: f64 = b.iter().map(|r| r[range.clone()].iter().map(|v| v * v).sum::<f64>()).sum();
        (s / b.len() as f64).sqrt()
    })
}

fn log_slope(x: &[f64], rmse: &[Est]) -> Est {
    let y: Vec<f64> = rmse.iter().map(|e| e.value.ln()).collect();
    let se: Vec<f64> = rmse.iter().map(|e| e.se / e.value).collect();
    weighted_slope(x, &y, &se)
}

/// Log-RMSE regressions: `α̂` against `log T_n`, `β̂` against `log n`.
pub fn rate_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let (lo, hi) = (cfg.ladder[0], *cfg.ladder.last().unwrap());
    if cfg.ladder.len() < 2 || (hi as f64) < 10.0 * lo as f64 {
        return Err(Error::config(
            "ladder",
            format!("ladder too short: {:?} must span at least one decade", cfg.ladder),
        ));
    }
    let theta = cfg.theta_true.to_flat();
    let (p, d) = (cfg.space.p(), theta.len());
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut per_est: Vec<(Vec<f64>, Vec<f64>, Vec<Est>, Vec<Est>)> = vec![Default::default(); cfg.estimators.len()];
    for (li, &n) in cfg.ladder.iter().enumerate() {
        let lv = level(cfg, n)?;
        let moments = lv.engine.moments(&cfg.theta_true)?;
        let outcomes = replicate_estimates(cfg, &lv.engine, &moments, li, 0);
        let ones = vec![1.0; d];
        let t = lv.engine.grid().total_time();
        for (e, est) in cfg.estimators.iter().enumerate() {
            let (errs, failures) = normalised_errors(&outcomes, e, &theta, &ones);
            failure_check(&mut checks, cfg, n, est.name(), failures, cfg.replicates);
            too_few(&errs, cfg.batches)?;
            let ra = rmse_of(&errs, 0..p, cfg.batches);
            let rb = (d > p).then(|| rmse_of(&errs, p..d, cfg.batches));
            let slot = &mut per_est[e];
            slot.0.push(t.ln());
            slot.1.push((n as f64).ln());
            slot.2.push(ra);
            if let Some(b) = rb {
                slot.3.push(b);
            }
            rows.push(RateRow {
                n,
                total_time: t,
                estimator: est.name().into(),
                failures,
                rmse_alpha: ra,
                rmse_beta: rb,
            });
        }
    }
    let mut slopes = Vec::new();
    for (e, est) in cfg.estimators.iter().enumerate() {
        let (lt, ln, ra, rb) = &per_est[e];
        let alpha_slope = log_slope(lt, ra);
        let beta_slope = (!rb.is_empty()).then(|| log_slope(ln, rb));
        if let Some(tol) = cfg.criteria.slope_tol {
            let target = cfg.criteria.slope_target;
            for (name, s) in [("alpha", Some(alpha_slope)), ("beta", beta_slope)] {
                if let Some(s) = s {
                    checks.push(Check::new(
                        format!("{} {name} slope", est.name()),
                        (s.value - target).abs() <= tol,
                        format!("{:.4} ± {:.4}, target {target} ± {tol}", s.value, s.se),
                    ));
                }
            }
        }
        slopes.push(RateSlope {
            estimator: est.name().into(),
            alpha_slope,
            beta_slope,
        });
    }
    Ok(StudyReport {
        study: StudyKind::Rate,
        seed: cfg.seed,
        replicates: cfg.replicates,
        ladder: cfg.ladder.clone(),
        checks,
        tables: Tables::Rate { rows, slopes },
    })
}

/// Local parameters used when the configuration lists none: zero, a unit
/// half-step on the first coordinate and a diagonal step.
pub fn default_w_set(d: usize) -> Vec<Vec<f64>> {
    let mut first = vec![0.0; d];
    first[0] = 0.5;
    let diag = vec![0.5 / (d as f64).sqrt(); d];
    let mut last = vec![0.0; d];
    last[d - 1] = -0.5;
    let mut set = vec![vec![0.0; d], first, diag];
    if d > 1 {
        set.push(last);
    }
    set
}

/// LAN check: `Δ_n` against `N(0, I)`, the remainder `r_n` along the ladder
/// and `E_θ[exp Λ_n^(θ,w)] = 1`.
pub fn lan_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let d = cfg.space.dim();
    let w_set = if cfg.w_set.is_empty() { default_w_set(d) } else { cfg.w_set.clone() };
    let mut delta_rows = Vec::new();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let n_max = *cfg.ladder.last().unwrap();
    for (li, &n) in cfg.ladder.iter().enumerate() {
        let lv = level(cfg, n)?;
        let eval = LanEvaluator::new(&lv.engine, &cfg.space, &cfg.theta_true, &lv.info, &w_set).map_err(|e| match e {
            Error::OutOfSpace(m) => Error::config("w_set", format!("n = {n}: {m}")),
            other => other,
        })?;
        let moments = lv.engine.moments(&cfg.theta_true)?;
        let draws: Vec<(Vec<f64>, Vec<(f64, f64)>)> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| -> Result<_> {
                let y = draw_from_moments(&moments, cfg.seed, stream_id(li, 0, r));
                let delta = eval.delta(&y)?;
                let per_w = (0..w_set.len())
                    .map(|k| eval.decompose_with(k, &y, &delta).map(|dec| (dec.remainder, dec.log_ratio)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((delta, per_w))
            })
            .collect::<Result<_>>()?;
        let mut ks = Vec::new();
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for k in 0..d {
            let col: Vec<f64> = draws.iter().map(|(dl, _)| dl[k]).collect();
            ks.push(ks_test(&col, normal_cdf));
            means.push(batch_mean(&col, cfg.batches));
            vars.push(batch_stat(&col, cfg.batches, variance));
        }
        if let (Some(limit), true) = (cfg.criteria.delta_ks_distance, n == n_max) {
            for (k, r) in ks.iter().enumerate() {
                checks.push(Check::new(
                    format!("n={n} delta[{k}] KS distance"),
                    r.statistic < limit,
                    format!("D = {:.4} (limit {limit})", r.statistic),
                ));
            }
        }
        delta_rows.push(LanDeltaRow {
            n,
            ks,
            mean: means,
            variance: vars,
        });
        for (k, w) in w_set.iter().enumerate() {
            let abs_r: Vec<f64> = draws.iter().map(|(_, pw)| pw[k].0.abs()).collect();
            let ex: Vec<f64> = draws.iter().map(|(_, pw)| pw[k].1.exp()).collect();
            let mean_exp = batch_mean(&ex, cfg.batches);
            if let Some(sig) = cfg.criteria.exp_sigmas {
                let pass = if mean_exp.se > 0.0 {
                    mean_exp.within(1.0, sig)
                } else {
                    (mean_exp.value - 1.0).abs() <= 1e-12
                };
                checks.push(Check::new(
                    format!("n={n} w{k} E[exp log-ratio]"),
                    pass,
                    format!("{:.5} ± {:.5}, target 1 within {sig} SE", mean_exp.value, mean_exp.se),
                ));
            }
            rows.push(LanRow {
                n,
                w_index: k,
                w: w.clone(),
                mean_abs_remainder: batch_mean(&abs_r, cfg.batches),
                p95_abs_remainder: batch_stat(&abs_r, cfg.batches, |b| quantile(b, 0.95)),
                mean_exp_log_ratio: mean_exp,
            });
        }
    }
    if cfg.criteria.remainder_decreasing && cfg.ladder.len() > 1 {
        for (k, w) in w_set.iter().enumerate() {
            if w.iter().all(|v| *v == 0.0) {
                continue;
            }
            let seq: Vec<f64> = rows.iter().filter(|r| r.w_index == k).map(|r| r.mean_abs_remainder.value).collect();
            checks.push(Check::new(
                format!("w{k} mean |r_n| strictly decreasing"),
                seq.windows(2).all(|p| p[1] < p[0]),
                format!("{seq:?}"),
            ));
        }
    }
    Ok(StudyReport {
        study: StudyKind::Lan,
        seed: cfg.seed,
        replicates: cfg.replicates,
        ladder: cfg.ladder.clone(),
        checks,
        tables: Tables::Lan { delta: delta_rows, rows },
    })
}

/// Average of `f` over the unit sphere in `R^d`: hyperspherical angles with
/// Gauss–Legendre polar rules and a trapezoid azimuth.
fn sphere_average(d: usize, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    if d == 1 {
        return Ok(0.5 * (f(&[1.0]) + f(&[-1.0])));
    }
    let m = match d {
        2 | 3 => 48,
        4 => 24,
        5 | 6 => 12,
        _ => return Err(Error::DimensionGuard { dim: d, max: 6 }),
    };
    let (x, w) = gauss_legendre(m);
    let polar: Vec<(f64, f64)> = x.iter().zip(&w).map(|(t, v)| (0.5 * PI * (t + 1.0), 0.5 * PI * v)).collect();
    let az = 2 * m;
    let polar_count = polar.len().pow(d as u32 - 2);
    let mut num = Vec::with_capacity(polar_count * az);
    let mut den = Vec::with_capacity(polar_count * az);
    let mut u = vec![0.0; d];
    for idx in 0..polar_count {
        let mut rem = idx;
        let mut jac = 1.0;
        let mut sin_prod = 1.0;
        for k in 0..d - 2 {
            let (phi, wt) = polar[rem % m];
            rem /= m;
            u[k] = sin_prod * phi.cos();
            jac *= wt * phi.sin().powi((d - 2 - k) as i32);
            sin_prod *= phi.sin();
        }
        for j in 0..az {
            let psi = 2.0 * PI * j as f64 / az as f64;
            u[d - 2] = sin_prod * psi.cos();
            u[d - 1] = sin_prod * psi.sin();
            num.push(jac * f(&u));
            den.push(jac);
        }
    }
    Ok(pairwise_sum(&num) / pairwise_sum(&den))
}

/// `P(χ²_d > x)` by the exact recurrences for integer and half-integer shapes.
fn chi_square_tail(d: usize, x: f64) -> f64 {
    let y = 0.5 * x;
    if y <= 0.0 {
        return 1.0;
    }
    let (mut q, mut s) = if d % 2 == 0 {
        ((-y).exp(), 1.0)
    } else {
        (erfc(y.sqrt()), 0.5)
    };
    while s + 0.5 < d as f64 / 2.0 {
        q += (s * y.ln() - y - lgamma(s + 1.0)).exp();
        s += 1.0;
    }
    q.clamp(0.0, 1.0)
}

/// `E[L(ξ)]` for `ξ ~ N(0, cov)`. With `ξ = cov^{1/2}·r·u`, `r ~ χ_d` and `u`
/// uniform on the sphere, the radial part is closed form and the angular
/// part is a smooth sphere average; quadratic loss is `trace(cov)`.
pub fn gaussian_expected_loss(cov: &DMatrix<f64>, loss: &Loss) -> Result<f64> {
    let d = cov.nrows();
    if let Loss::Power { a } = loss {
        if *a == 2.0 {
            return Ok(cov.trace());
        }
    }
    let root = spd_sqrt(cov, 0.0, "covariance")?;
    let stretch = |u: &[f64]| (&root * DVector::from_column_slice(u)).norm();
    match *loss {
        Loss::Power { a } => {
            let df = d as f64;
            let radial = (0.5 * a * 2f64.ln() + lgamma(0.5 * (df + a)) - lgamma(0.5 * df)).exp();
            Ok(radial * sphere_average(d, |u| stretch(u).powf(a))?)
        }
        Loss::Indicator { threshold } => sphere_average(d, |u| {
            let s = stretch(u);
            chi_square_tail(d, (threshold / s).powi(2))
        }),
    }
}

/// Centre and axis extremes `θ ± ε·width_k·e_k`.
pub fn risk_lattice(cfg: &StudyConfig) -> Result<Vec<Theta>> {
    let centre = cfg.theta_true.to_flat();
    let widths = cfg.space.widths();
    let mut out = vec![cfg.theta_true.clone()];
    for k in 0..centre.len() {
        for s in [-1.0, 1.0] {
            let mut x = centre.clone();
            x[k] += s * cfg.epsilon * widths[k];
            let t = Theta::from_flat(&x, cfg.space.p());
            if !cfg.space.contains(&t) {
                return Err(Error::config("epsilon", format!("lattice point {t} leaves the parameter box")));
            }
            out.push(t);
        }
    }
    Ok(out)
}

/// Sup of the normalised risk over the ε-lattice against the Gaussian bound.
pub fn risk_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    if cfg.losses.is_empty() {
        return Err(Error::config("losses", "empty"));
    }
    let lattice = risk_lattice(cfg)?;
    let n_max = *cfg.ladder.last().unwrap();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (li, &n) in cfg.ladder.iter().enumerate() {
        let lv = level(cfg, n)?;
        let rates = lv.info.rates();
        let cov = lv.info.asymptotic_covariance()?;
        let bounds: Vec<f64> = cfg.losses.iter().map(|l| gaussian_expected_loss(&cov, l)).collect::<Result<_>>()?;
        // risk[est][loss][point]
        let mut risk = vec![vec![Vec::new(); cfg.losses.len()]; cfg.estimators.len()];
        let mut failures = vec![0usize; cfg.estimators.len()];
        for (j, point) in lattice.iter().enumerate() {
            let moments = lv.engine.moments(point)?;
            let outcomes = replicate_estimates(cfg, &lv.engine, &moments, li, j);
            let flat = point.to_flat();
            for e in 0..cfg.estimators.len() {
                let (errs, f) = normalised_errors(&outcomes, e, &flat, &rates);
                failures[e] += f;
                too_few(&errs, cfg.batches)?;
                for (l, loss) in cfg.losses.iter().enumerate() {
                    let vals: Vec<f64> = errs.iter().map(|x| loss.eval(x)).collect();
                    risk[e][l].push(batch_mean(&vals, cfg.batches));
                }
            }
        }
        for (e, est) in cfg.estimators.iter().enumerate() {
            failure_check(&mut checks, cfg, n, est.name(), failures[e], cfg.replicates * lattice.len());
            for (l, loss) in cfg.losses.iter().enumerate() {
                let cells = &risk[e][l];
                let argsup = (0..cells.len()).fold(0, |b, j| if cells[j].value > cells[b].value { j } else { b });
                let sup = cells[argsup];
                let ratio = Est::new(sup.value / bounds[l], sup.se / bounds[l]);
                if let (Some([lo, hi]), Loss::Power { a }, true) = (cfg.criteria.risk_ratio, loss, n == n_max) {
                    if *a == 2.0 {
                        checks.push(Check::new(
                            format!("n={n} {} {} risk ratio", est.name(), loss.name()),
                            ratio.value >= lo && ratio.value <= hi,
                            format!("{:.4} ± {:.4}, range [{lo}, {hi}]", ratio.value, ratio.se),
                        ));
                    }
                }
                rows.push(RiskRow {
                    n,
                    estimator: est.name().into(),
                    loss: loss.name(),
                    lattice_risk: cells.clone(),
                    sup_risk: sup,
                    argsup,
                    bound: bounds[l],
                    ratio,
                    failures: failures[e],
                });
            }
        }
    }
    Ok(StudyReport {
        study: StudyKind::Risk,
        seed: cfg.seed,
        replicates: cfg.replicates,
        ladder: cfg.ladder.clone(),
        checks,
        tables: Tables::Risk {
            lattice: lattice.iter().map(Theta::to_flat).collect(),
            rows,
        },
    })
}
