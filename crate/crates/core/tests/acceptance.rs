//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p signoise-core --test acceptance`.

use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use signoise_core::estimate::{
    bayes_estimate, importance_sampling_mean, mle_linear_closed_form, mle_numeric, BayesOptions, MleOptions, Prior,
};
use signoise_core::experiments::*;
use signoise_core::increments::IncrementEngine;
use signoise_core::likelihood::{grad_log_likelihood, log_likelihood};
use signoise_core::model::{
    BasisFn, Bound, CustomNoise, CustomSignal, ModelSpec, NoiseFamily, ParameterSpace, Profile, SignalFamily, Theta,
};
use signoise_core::sampling::TimeGrid;
use signoise_core::simulate::simulate_replicate;
use signoise_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn trig() -> SignalFamily {
    SignalFamily::Linear(vec![BasisFn::Cos { freq: 1.0 }, BasisFn::Sin { freq: 1.0 }])
}

fn known_profile() -> Profile {
    Profile::constant(0.5).with_term(0.2, BasisFn::Cos { freq: 2.0 })
}

fn known_trig() -> (ModelSpec, ParameterSpace, Theta) {
    let model = ModelSpec::new(trig(), NoiseFamily::Known(known_profile())).unwrap();
    let space = ParameterSpace::new(vec![Bound::new(-3.0, 3.0), Bound::new(-3.0, 3.0)], vec![]).unwrap();
    (model, space, Theta::new(vec![1.0, -0.5], vec![]))
}

fn scaled_trig() -> (ModelSpec, ParameterSpace, Theta) {
    let model = ModelSpec::new(
        trig(),
        NoiseFamily::Scaled(Profile::constant(1.0).with_term(0.5, BasisFn::Cos { freq: 1.0 })),
    )
    .unwrap();
    let space =
        ParameterSpace::new(vec![Bound::new(-3.0, 3.0), Bound::new(-3.0, 3.0)], vec![Bound::new(0.2, 3.0)]).unwrap();
    (model, space, Theta::new(vec![1.0, -0.5], vec![0.8]))
}

fn log_linear() -> (ModelSpec, ParameterSpace, Theta) {
    let model = ModelSpec::new(
        SignalFamily::Linear(vec![BasisFn::Constant, BasisFn::Cos { freq: 1.0 }]),
        NoiseFamily::LogLinear(vec![BasisFn::Constant, BasisFn::Sin { freq: 1.0 }]),
    )
    .unwrap();
    let space = ParameterSpace::new(
        vec![Bound::new(-2.0, 2.0), Bound::new(-2.0, 2.0)],
        vec![Bound::new(-2.0, 2.0), Bound::new(-1.0, 1.0)],
    )
    .unwrap();
    (model, space, Theta::new(vec![0.5, 1.0], vec![-0.5, 0.3]))
}

/// `f = α₀ sin(2πt + α₁)`, `σ² = e^{β₀} + β₁²(1 + cos 2πt)/2`.
fn custom() -> (ModelSpec, ParameterSpace, Theta) {
    use std::f64::consts::TAU;
    let signal = CustomSignal {
        name: "phase-sine".into(),
        p: 2,
        value: Arc::new(|a, t| a[0] * (TAU * t + a[1]).sin()),
        gradient: Arc::new(|a, t, g| {
            g[0] = (TAU * t + a[1]).sin();
            g[1] = a[0] * (TAU * t + a[1]).cos();
        }),
        antiderivative: None,
    };
    let noise = CustomNoise {
        name: "exp-plus-square".into(),
        q: 2,
        value: Arc::new(|b, t| b[0].exp() + b[1] * b[1] * 0.5 * (1.0 + (TAU * t).cos())),
        gradient: Arc::new(|b, t, g| {
            g[0] = b[0].exp();
            g[1] = b[1] * (1.0 + (TAU * t).cos());
        }),
        hessian: Arc::new(|b, t, h| {
            h[0] = b[0].exp();
            h[1] = 0.0;
            h[2] = 0.0;
            h[3] = 1.0 + (TAU * t).cos();
        }),
        antiderivative: None,
    };
    let model = ModelSpec::new(SignalFamily::Custom(signal), NoiseFamily::Custom(noise)).unwrap();
    let space = ParameterSpace::new(
        vec![Bound::new(0.2, 3.0), Bound::new(-1.5, 1.5)],
        vec![Bound::new(-2.0, 1.0), Bound::new(0.1, 2.0)],
    )
    .unwrap();
    (model, space, Theta::new(vec![1.2, 0.3], vec![-0.4, 0.7]))
}

fn step() -> (ModelSpec, ParameterSpace, Theta) {
    let model = ModelSpec::new(
        SignalFamily::Linear(vec![
            BasisFn::Constant,
            BasisFn::Step {
                period: 1.0,
                breaks: vec![0.0, 0.3, 0.7],
                levels: vec![1.0, -1.0, 0.5],
            },
        ]),
        NoiseFamily::Scaled(Profile::constant(1.0).with_term(
            0.6,
            BasisFn::Step {
                period: 0.5,
                breaks: vec![0.0, 0.2],
                levels: vec![1.0, -1.0],
            },
        )),
    )
    .unwrap();
    let space =
        ParameterSpace::new(vec![Bound::new(-2.0, 2.0), Bound::new(-2.0, 2.0)], vec![Bound::new(0.1, 4.0)]).unwrap();
    (model, space, Theta::new(vec![0.4, -0.8], vec![1.3]))
}

/// Irregular deterministic grid on `[0, horizon]`.
fn irregular(n: usize, horizon: f64) -> TimeGrid {
    TimeGrid::quantile(|u| horizon * (u + 0.6 * (std::f64::consts::TAU * 3.0 * u).sin() / (std::f64::consts::TAU * 3.0)), n)
        .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn summarize(r: &StudyReport) -> String {
    match r.failed_checks().first() {
        None => format!("{} checks", r.checks.len()),
        Some(c) => format!("{} of {} checks failed, first: {}: {}", r.failed_checks().len(), r.checks.len(), c.name, c.detail),
    }
}

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let (model, space, theta) = known_trig();
    let grid = irregular(500, 50.0);
    let engine = IncrementEngine::new(&model, &grid)?;
    let g2 = engine.moments(&theta)?.g2;
    let mut worst = 0.0f64;
    let mut all_converged = true;
    for fast_path in [true, false] {
        let opts = MleOptions {
            fast_path,
            ..MleOptions::default()
        };
        for r in 0..50 {
            let y = simulate_replicate(&engine, &theta, 11, r)?.y;
            let closed = mle_linear_closed_form(engine.design().unwrap(), &g2, &y)?;
            let numeric = mle_numeric(&engine, &space, &y, &opts)?;
            all_converged &= numeric.converged;
            for (a, b) in numeric.theta_hat.alpha.iter().zip(&closed.alpha_hat) {
                worst = worst.max(rel(*a, *b));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        worst < 1e-6 && all_converged && secs < 60.0,
        format!("max coordinate rel err {worst:.2e} over 50 samples x 2 objective paths"),
    ))
}

fn criterion_2() -> Result<Outcome> {
    let (model, space, theta) = known_trig();
    let mut cfg = StudyConfig::new(model, space, GridRule::Uniform { h: 0.1 }, theta);
    cfg.replicates = 2000;
    cfg.seed = 2;
    cfg.estimators = vec![Estimator::Mle];
    cfg.criteria.cov_rel_tol = None;
    let r = normality_study(&cfg)?;
    let Tables::Normality { cells } = &r.tables else { unreachable!() };
    let p_min = cells
        .iter()
        .flat_map(|c| c.ks_whitened.iter().map(|k| k.p_value))
        .fold(1.0f64, f64::min);
    Ok(outcome(r.passed(), format!("{}; min whitened KS p = {p_min:.3}", summarize(&r))))
}

fn criterion_3() -> Result<Outcome> {
    let start = Instant::now();
    let (model, space, theta) = scaled_trig();
    let mut details = Vec::new();
    let mut pass = true;
    for (label, grid) in [
        ("h->0", GridRule::Shrinking { scale: 2.0, exponent: 0.5 }),
        (
            "pattern",
            GridRule::Pattern {
                offsets: vec![0.2, 0.45, 0.7, 1.0],
                period: 1.0,
            },
        ),
    ] {
        let mut cfg = StudyConfig::new(model.clone(), space.clone(), grid, theta.clone());
        cfg.replicates = 1000;
        cfg.seed = 3;
        let r = rate_study(&cfg)?;
        let Tables::Rate { slopes, .. } = &r.tables else { unreachable!() };
        let s = &slopes[0];
        details.push(format!(
            "{label}: alpha {:.3} ± {:.3}, beta {:.3} ± {:.3}",
            s.alpha_slope.value,
            s.alpha_slope.se,
            s.beta_slope.unwrap().value,
            s.beta_slope.unwrap().se
        ));
        pass &= r.passed();
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(pass && secs < 600.0, details.join("; ")))
}

fn criterion_4() -> Result<Outcome> {
    let (model, space, theta) = scaled_trig();
    let mut cfg = StudyConfig::new(model, space, GridRule::Shrinking { scale: 2.0, exponent: 0.5 }, theta);
    cfg.ladder = vec![1600];
    cfg.replicates = 2000;
    cfg.seed = 4;
    cfg.reference = Reference::PeriodicLimit { period: 1.0 };
    cfg.criteria.ks_level = None;
    cfg.criteria.variance_sigmas = None;
    let r = normality_study(&cfg)?;
    let Tables::Normality { cells } = &r.tables else { unreachable!() };
    Ok(outcome(
        r.passed(),
        format!("max-norm rel deviation {:.4} (limit 0.10)", cells[0].covariance_max_rel_dev),
    ))
}

fn criterion_5() -> Result<Outcome> {
    let (model, space, theta) = scaled_trig();
    let mut cfg = StudyConfig::new(
        model,
        space,
        GridRule::Pattern {
            offsets: vec![0.2, 0.45, 0.7, 1.0],
            period: 1.0,
        },
        theta,
    );
    cfg.replicates = 2000;
    cfg.seed = 5;
    cfg.w_set = vec![vec![0.5, -0.5, 0.8], vec![-1.0, 0.3, -0.4], vec![0.2, 0.9, 0.6]];
    let r = lan_study(&cfg)?;
    let Tables::Lan { delta, rows } = &r.tables else { unreachable!() };
    let d_max = delta.last().unwrap().ks.iter().map(|k| k.statistic).fold(0.0f64, f64::max);
    let rem: Vec<String> = rows
        .iter()
        .filter(|r| r.w_index == 0)
        .map(|r| format!("{:.4}", r.mean_abs_remainder.value))
        .collect();
    Ok(outcome(
        r.passed(),
        format!("{}; KS distance at n=1600 {d_max:.4}; mean |r_n| for w0 [{}]", summarize(&r), rem.join(", ")),
    ))
}

fn criterion_6() -> Result<Outcome> {
    let start = Instant::now();
    let (model, space, theta) = log_linear();
    let grid = irregular(200, 20.0);
    let engine = IncrementEngine::new(&model, &grid)?;
    let cfg = PowerIdentityConfig {
        pairs: vec![
            PowerPair {
                theta: theta.clone(),
                mu: vec![0.15, -0.1, 0.0, 0.0],
            },
            PowerPair {
                theta: theta.clone(),
                mu: vec![0.0, 0.0, 0.08, -0.1],
            },
            PowerPair {
                theta: Theta::new(vec![-0.3, 0.6], vec![0.2, -0.4]),
                mu: vec![-0.1, 0.12, -0.06, 0.08],
            },
        ],
        z: vec![0.25, 0.5, 0.75],
        replicates: 100_000,
        seed: 6,
        batches: 20,
        sigmas: 4.0,
    };
    let r = power_identity_check(&engine, &space, &cfg)?;
    let Tables::PowerIdentity { rows, .. } = &r.tables else { unreachable!() };
    let worst = rows.iter().map(|r| r.deviation_in_se.abs()).fold(0.0f64, f64::max);
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        r.passed() && secs < 300.0,
        format!("{}; worst deviation {worst:.2} SE", summarize(&r)),
    ))
}

fn criterion_7() -> Result<Outcome> {
    let model = ModelSpec::new(
        SignalFamily::Linear(vec![BasisFn::Cos { freq: 1.0 }, BasisFn::Sin { freq: 2.0 }]),
        NoiseFamily::LogLinear(vec![BasisFn::Constant, BasisFn::Cos { freq: 1.0 }, BasisFn::Sin { freq: 1.0 }]),
    )?;
    let cfg = FisherConvergenceConfig {
        theta: Theta::new(vec![1.0, 0.5], vec![-0.2, 0.4, -0.3]),
        period: 1.0,
        divisions: vec![8, 32, 128, 512],
        cycles: 1,
        pattern: Some(vec![0.05, 0.3, 0.35, 0.8, 1.0]),
        pattern_cycles: 25,
        final_tol: 0.01,
        pattern_tol: 1e-12,
    };
    let r = fisher_convergence_study(&model, &cfg)?;
    let Tables::FisherConvergence { rows, pattern_rel_error } = &r.tables else { unreachable!() };
    let errs: Vec<String> = rows.iter().map(|r| format!("{:.2e}", r.rel_error)).collect();
    Ok(outcome(
        r.passed(),
        format!("errors [{}]; pattern {:.2e}", errs.join(", "), pattern_rel_error.unwrap()),
    ))
}

fn criterion_8() -> Result<Outcome> {
    let (model, space, theta) = scaled_trig();
    let grid = TimeGrid::uniform(1000, 0.05)?;
    let engine = IncrementEngine::new(&model, &grid)?;
    let opts = BayesOptions::default();
    let mut gap = 0.0f64;
    let mut is_dev = 0.0f64;
    for r in 0..20 {
        let y = simulate_replicate(&engine, &theta, 81, r)?.y;
        let mle = mle_numeric(&engine, &space, &y, &MleOptions::default())?;
        let post = bayes_estimate(&engine, &space, &y, &Prior::Uniform, &opts, &mle)?;
        let mean = post.mean.to_flat();
        for (a, b) in mean.iter().zip(mle.theta_hat.iter()) {
            gap = gap.max((a - b).abs());
        }
        if r < 3 {
            let is = importance_sampling_mean(&engine, &space, &y, &Prior::Uniform, &mle.theta_hat, 20_000, 82 + r, 1.5)?;
            for k in 0..mean.len() {
                is_dev = is_dev.max((is.mean[k] - mean[k]).abs() / is.se[k]);
            }
        }
    }
    let mut cfg = StudyConfig::new(model, space, GridRule::Shrinking { scale: 2.0, exponent: 0.5 }, theta);
    cfg.ladder = vec![1600];
    cfg.replicates = 2000;
    cfg.seed = 8;
    cfg.estimators = vec![Estimator::BayesMean];
    cfg.criteria.cov_rel_tol = None;
    let r = normality_study(&cfg)?;
    let Tables::Normality { cells } = &r.tables else { unreachable!() };
    let p_min = cells[0].ks_whitened.iter().map(|k| k.p_value).fold(1.0f64, f64::min);
    Ok(outcome(
        gap < 0.05 && is_dev <= 3.0 && r.passed(),
        format!(
            "max |posterior mean - MLE| {gap:.4} (20 samples, n=1000); IS vs tensor {is_dev:.2} SE; normality at n=1600: {}, min KS p {p_min:.3}",
            summarize(&r)
        ),
    ))
}

/// Fourth-order central difference of `Λ` along coordinate `k`.
fn fd_gradient(engine: &IncrementEngine, x: &[f64], y: &[f64], space: &ParameterSpace) -> Result<Vec<f64>> {
    let widths = space.widths();
    let eval = |v: &[f64]| log_likelihood(&engine.moments(&Theta::from_flat(v, space.p()))?, y);
    (0..x.len())
        .map(|k| {
            let h = 1e-3 * widths[k];
            let at = |s: f64| {
                let mut v = x.to_vec();
                v[k] += s * h;
                eval(&v)
            };
            Ok((8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * h))
        })
        .collect()
}

fn criterion_9() -> Result<Outcome> {
    let families: Vec<(&str, (ModelSpec, ParameterSpace, Theta))> = vec![
        ("known-trig", known_trig()),
        ("scaled-trig", scaled_trig()),
        ("log-linear", log_linear()),
        ("step", step()),
        ("custom", custom()),
    ];
    let grid = irregular(200, 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, (model, space, theta)) in families {
        let engine = IncrementEngine::new(&model, &grid)?;
        let y = simulate_replicate(&engine, &theta, 9, 0)?.y;
        let mut worst = 0.0f64;
        for _ in 0..100 {
            // interior points at least 5% of each width away from the faces
            let x: Vec<f64> = space
                .bounds()
                .map(|b| b.lo + b.width() * (0.05 + 0.9 * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64))
                .collect();
            let g = grad_log_likelihood(&engine.moments(&Theta::from_flat(&x, space.p()))?, &y)?;
            let fd = fd_gradient(&engine, &x, &y, &space)?;
            let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
            worst = worst.max(err);
        }
        pass &= worst < 1e-6;
        parts.push(format!("{name} {worst:.1e}"));
    }
    Ok(outcome(pass, format!("max rel err per family: {}", parts.join(", "))))
}

fn criterion_10() -> Result<Outcome> {
    let (model, space, theta) = scaled_trig();
    let mut cfg = StudyConfig::new(model, space, GridRule::Uniform { h: 0.1 }, theta);
    cfg.ladder = vec![40, 160];
    cfg.replicates = 200;
    cfg.seed = 10;
    cfg.estimators = vec![Estimator::Mle, Estimator::BayesMean, Estimator::BayesMedian];
    cfg.losses = vec![Loss::Power { a: 2.0 }, Loss::Indicator { threshold: 2.0 }];
    let mut mle_only = cfg.clone();
    mle_only.estimators = vec![Estimator::Mle, Estimator::MleClosed];
    let run = |threads: usize| -> Result<Vec<Vec<u8>>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut out = Vec::new();
            for r in [normality_study(&cfg)?, rate_study_short(&cfg)?, lan_study(&cfg)?, risk_study(&mle_only)?] {
                let mut csv = Vec::new();
                r.write_csv(&mut csv)?;
                out.push(r.to_json().into_bytes());
                out.push(csv);
            }
            Ok(out)
        })
    };
    let (a, b) = (run(1)?, run(8)?);
    let same = a == b;
    Ok(outcome(
        same,
        format!("normality, rate, lan and risk reports with workers 1 and 8: {}", if same { "byte-identical" } else { "differ" }),
    ))
}

fn rate_study_short(cfg: &StudyConfig) -> Result<StudyReport> {
    let mut c = cfg.clone();
    c.ladder = vec![20, 80, 320];
    c.estimators = vec![Estimator::Mle];
    rate_study(&c)
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("closed-form oracle", criterion_1),
        ("exact normality", criterion_2),
        ("rates in both regimes", criterion_3),
        ("limit covariance", criterion_4),
        ("local asymptotic normality", criterion_5),
        ("power identity", criterion_6),
        ("information convergence", criterion_7),
        ("Bayes estimator", criterion_8),
        ("gradient integrity", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {}: {} ({}; {:.1}s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
