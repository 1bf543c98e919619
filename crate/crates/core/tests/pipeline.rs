//! Cross-module checks: simulation, persistence, likelihood, information and
//! both estimators working together.

use std::sync::Arc;

use signoise_core::estimate::{bayes_estimate, mle_closed_form, mle_numeric, BayesOptions, MleOptions, Prior};
use signoise_core::increments::IncrementEngine;
use signoise_core::information::empirical_fisher;
use signoise_core::likelihood::grad_log_likelihood;
use signoise_core::model::{BasisFn, Bound, ModelSpec, NoiseFamily, ParameterSpace, Profile, SignalFamily, Theta};
use signoise_core::rng::NormalStream;
use signoise_core::sampling::TimeGrid;
use signoise_core::simulate::{simulate_increments, simulate_replicate, IncrementSample};
use signoise_core::stats::{batch_mean, covariance};

fn log_linear_model() -> (ModelSpec, ParameterSpace, Theta) {
    let model = ModelSpec::new(
        SignalFamily::Linear(vec![BasisFn::Constant, BasisFn::Sin { freq: 1.0 }]),
        NoiseFamily::LogLinear(vec![BasisFn::Constant, BasisFn::Cos { freq: 1.0 }]),
    )
    .unwrap();
    let space = ParameterSpace::new(
        vec![Bound::new(-3.0, 3.0), Bound::new(-3.0, 3.0)],
        vec![Bound::new(-2.0, 2.0), Bound::new(-1.0, 1.0)],
    )
    .unwrap();
    (model, space, Theta::new(vec![0.7, -1.1], vec![-0.3, 0.5]))
}

#[test]
fn score_covariance_equals_scaled_information() {
    let (model, _, theta) = log_linear_model();
    let grid = TimeGrid::quantile(|u| 30.0 * u.powf(1.3), 300).unwrap();
    let engine = IncrementEngine::new(&model, &grid).unwrap();
    let m = engine.moments(&theta).unwrap();
    let scores: Vec<Vec<f64>> = (0..6000)
        .map(|r| {
            let y = simulate_replicate(&engine, &theta, 31, r).unwrap().y;
            grad_log_likelihood(&m, &y).unwrap()
        })
        .collect();
    let c = covariance(&scores);
    let info = empirical_fisher(&m, &grid).unwrap();
    let rates = info.rates();
    let j = info.j_theta();
    for a in 0..4 {
        for b in 0..4 {
            let want = j[(a, b)] * rates[a] * rates[b];
            let scale = (j[(a, a)] * j[(b, b)]).sqrt() * rates[a] * rates[b];
            assert!((c[(a, b)] - want).abs() < 0.1 * scale, "({a},{b}): {} vs {want}", c[(a, b)]);
        }
    }
    // mean score is zero at the truth
    for k in 0..4 {
        let col: Vec<f64> = scores.iter().map(|s| s[k]).collect();
        assert!(batch_mean(&col, 20).within(0.0, 4.0));
    }
}

#[test]
fn csv_round_trip_preserves_estimates() {
    let model = ModelSpec::new(
        SignalFamily::Linear(vec![BasisFn::Cos { freq: 1.0 }, BasisFn::Sin { freq: 1.0 }]),
        NoiseFamily::Scaled(Profile::constant(1.0).with_term(0.4, BasisFn::Sin { freq: 2.0 })),
    )
    .unwrap();
    let theta = Theta::new(vec![0.3, 0.9], vec![1.4]);
    let grid = TimeGrid::quantile(|u| 12.0 * u * u, 240).unwrap();
    let sample = simulate_increments(&model, &theta, &grid, 5).unwrap();
    let mut buf = Vec::new();
    sample.write_csv(&grid, &mut buf).unwrap();
    let (back, back_grid) = IncrementSample::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.y, sample.y);
    assert_eq!(back_grid.instants(), grid.instants());
    let a = mle_closed_form(&IncrementEngine::new(&model, &grid).unwrap(), &sample.y).unwrap();
    let b = mle_closed_form(&IncrementEngine::new(&model, &back_grid).unwrap(), &back.y).unwrap();
    assert_eq!(a.theta_hat, b.theta_hat);
}

#[test]
fn numeric_mle_with_quadrature_moments_recovers_the_truth() {
    let (model, space, theta) = log_linear_model();
    let grid = TimeGrid::uniform(4000, 0.25).unwrap();
    let engine = IncrementEngine::new(&model, &grid).unwrap();
    let y = simulate_replicate(&engine, &theta, 77, 0).unwrap().y;
    let fit = mle_numeric(&engine, &space, &y, &MleOptions::default()).unwrap();
    assert!(fit.converged);
    let se = fit.stderr_diag.clone().unwrap();
    for (k, (a, b)) in fit.theta_hat.iter().zip(theta.iter()).enumerate() {
        assert!((a - b).abs() < 4.0 * se[k], "coordinate {k}: {a} vs {b} (se {})", se[k]);
    }
}

/// With θ drawn from the prior, the posterior mean minimises the average
/// squared error and the posterior median the average absolute error.
#[test]
fn posterior_summaries_beat_the_mle_in_bayes_risk() {
    let model = ModelSpec::new(
        SignalFamily::Linear(vec![BasisFn::Constant]),
        NoiseFamily::Known(Profile::constant(1.0)),
    )
    .unwrap();
    let space = ParameterSpace::new(vec![Bound::new(-3.0, 3.0)], vec![]).unwrap();
    let grid = TimeGrid::uniform(20, 0.1).unwrap();
    let engine = IncrementEngine::new(&model, &grid).unwrap();
    let prior_sd = 0.6;
    let prior = Prior::Density {
        name: "normal-0.6".into(),
        density: Arc::new(move |x: &[f64]| (-0.5 * (x[0] / prior_sd).powi(2)).exp()),
    };
    let (mut sq, mut abs) = (Vec::new(), Vec::new());
    for r in 0..400u64 {
        let alpha = (prior_sd * NormalStream::at(90, r, 0)).clamp(-2.9, 2.9);
        let theta = Theta::new(vec![alpha], vec![]);
        let y = simulate_replicate(&engine, &theta, 91, r).unwrap().y;
        let mle = mle_numeric(&engine, &space, &y, &MleOptions::default()).unwrap();
        let post = bayes_estimate(&engine, &space, &y, &prior, &BayesOptions::default(), &mle).unwrap();
        let e_mle = mle.theta_hat.alpha[0] - alpha;
        let e_mean = post.mean.alpha[0] - alpha;
        let e_med = post.median_proxy.alpha[0] - alpha;
        sq.push(e_mle * e_mle - e_mean * e_mean);
        abs.push(e_mle.abs() - e_med.abs());
    }
    let (d_sq, d_abs) = (batch_mean(&sq, 20), batch_mean(&abs, 20));
    assert!(d_sq.value + d_sq.se > 0.0, "{d_sq:?}");
    assert!(d_abs.value + d_abs.se > 0.0, "{d_abs:?}");
}
