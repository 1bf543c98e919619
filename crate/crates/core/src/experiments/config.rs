//! Study configuration: model, grid family, ladder and assertion thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{BayesOptions, MleOptions, Prior};
use crate::increments::IncrementEngine;
use crate::information::{empirical_fisher, periodic_limit_fisher, InformationBundle, LimitRegime};
use crate::model::{ModelSpec, ParameterSpace, Theta};
use crate::sampling::TimeGrid;

/// How the grid for sample size `n` is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridRule {
    /// Fixed step `h`, `T_n = n·h`.
    Uniform { h: f64 },
    /// `h_n = scale·n^(−exponent)` with `0 < exponent < 1`, so `h_n → 0` and
    /// `T_n → ∞`.
    Shrinking { scale: f64, exponent: f64 },
    /// Offsets in `(0, period]` repeated every period; `n` must be a
    /// multiple of the pattern length.
    Pattern { offsets: Vec<f64>, period: f64 },
}

impl GridRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            GridRule::Uniform { h } if !(*h > 0.0 && h.is_finite()) => {
                Err(Error::config("grid.h", format!("step {h} must be positive")))
            }
            GridRule::Shrinking { scale, exponent } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::config("grid.scale", format!("{scale} must be positive")));
                }
                if !(*exponent > 0.0 && *exponent < 1.0) {
                    return Err(Error::config("grid.exponent", format!("{exponent} must lie in (0, 1)")));
                }
                Ok(())
            }
            GridRule::Pattern { offsets, period } => TimeGrid::periodic_pattern(offsets, *period, 1)
                .map(|_| ())
                .map_err(|e| Error::config("grid.offsets", e.to_string())),
            _ => Ok(()),
        }
    }

    pub fn grid(&self, n: usize) -> Result<TimeGrid> {
        match self {
            GridRule::Uniform { h } => TimeGrid::uniform(n, *h),
            GridRule::Shrinking { scale, exponent } => TimeGrid::uniform(n, scale * (n as f64).powf(-exponent)),
            GridRule::Pattern { offsets, period } => {
                if n % offsets.len() != 0 {
                    return Err(Error::config(
                        "ladder",
                        format!("n = {n} is not a multiple of the pattern length {}", offsets.len()),
                    ));
                }
                TimeGrid::periodic_pattern(offsets, *period, n / offsets.len())
            }
        }
    }

    /// Limit regime seen by a `period`-periodic model, and the period in
    /// which the regime is stated.
    pub fn limit_regime(&self, period: f64) -> (LimitRegime, f64) {
        match self {
            GridRule::Pattern { offsets, period: p } => (LimitRegime::Pattern { offsets: offsets.clone() }, *p),
            GridRule::Uniform { h } => {
                let k = (period / h).round();
                if k >= 1.0 && (k * h - period).abs() <= 1e-12 * period {
                    let offsets = (1..=k as usize).map(|j| j as f64 * h).collect();
                    (LimitRegime::Pattern { offsets }, period)
                } else {
                    (LimitRegime::HToZero, period)
                }
            }
            GridRule::Shrinking { .. } => (LimitRegime::HToZero, period),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Mle,
    MleClosed,
    BayesMean,
    BayesMedian,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Mle => "mle",
            Estimator::MleClosed => "mle-closed",
            Estimator::BayesMean => "bayes-mean",
            Estimator::BayesMedian => "bayes-median",
        }
    }
}

/// Loss applied to the normalised error `(√T_n(α̂−α), √n(β̂−β))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Loss {
    /// `|x|^a`.
    Power { a: f64 },
    /// `1{|x| > threshold}`.
    Indicator { threshold: f64 },
}

impl Loss {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        match self {
            Loss::Power { a } => r.powf(*a),
            Loss::Indicator { threshold } => f64::from(u8::from(r > *threshold)),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Loss::Power { a } => format!("power-{a}"),
            Loss::Indicator { threshold } => format!("indicator-{threshold}"),
        }
    }
}

/// Source of the information matrix used to whiten errors and state limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Reference {
    /// Finite-`n` information of the grid at hand.
    Empirical,
    /// Periodic limit; the regime follows from the grid rule.
    PeriodicLimit { period: f64 },
}

/// Thresholds of the asserted comparisons. `None` disables a check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Criteria {
    pub ks_level: Option<f64>,
    pub variance_sigmas: Option<f64>,
    pub cov_rel_tol: Option<f64>,
    pub slope_target: f64,
    pub slope_tol: Option<f64>,
    pub delta_ks_distance: Option<f64>,
    pub remainder_decreasing: bool,
    pub exp_sigmas: Option<f64>,
    pub risk_ratio: Option<[f64; 2]>,
    pub max_failure_rate: f64,
}

impl Default for Criteria {
    fn default() -> Self {
        Self {
            ks_level: Some(1e-3),
            variance_sigmas: Some(3.0),
            cov_rel_tol: Some(0.10),
            slope_target: -0.5,
            slope_tol: Some(0.1),
            delta_ks_distance: Some(0.05),
            remainder_decreasing: true,
            exp_sigmas: Some(4.0),
            risk_ratio: Some([0.9, 1.3]),
            max_failure_rate: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub model: ModelSpec,
    pub space: ParameterSpace,
    pub grid: GridRule,
    pub theta_true: Theta,
    pub ladder: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub losses: Vec<Loss>,
    pub reference: Reference,
    pub w_set: Vec<Vec<f64>>,
    /// Half-width of the risk lattice as a fraction of each box width.
    pub epsilon: f64,
    pub batches: usize,
    pub mle: MleOptions,
    pub bayes: BayesOptions,
    pub prior: Prior,
    pub criteria: Criteria,
}

impl StudyConfig {
    pub fn new(model: ModelSpec, space: ParameterSpace, grid: GridRule, theta_true: Theta) -> Self {
        Self {
            model,
            space,
            grid,
            theta_true,
            ladder: vec![100, 400, 1600],
            replicates: 1000,
            seed: 1,
            estimators: vec![Estimator::Mle],
            losses: vec![Loss::Power { a: 2.0 }],
            reference: Reference::Empirical,
            w_set: Vec::new(),
            epsilon: 0.05,
            batches: 20,
            mle: MleOptions::default(),
            bayes: BayesOptions::default(),
            prior: Prior::Uniform,
            criteria: Criteria::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .check_compatible(&self.space)
            .map_err(|e| Error::config("space", e.to_string()))?;
        if self.theta_true.alpha.len() != self.space.p() || self.theta_true.beta.len() != self.space.q() {
            return Err(Error::config("theta_true", "length does not match the model"));
        }
        if !self.space.contains(&self.theta_true) {
            return Err(Error::config("theta_true", format!("{} is not inside the parameter box", self.theta_true)));
        }
        self.grid.validate()?;
        if self.ladder.is_empty() {
            return Err(Error::config("ladder", "empty"));
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) || self.ladder[0] == 0 {
            return Err(Error::config("ladder", "must be positive and strictly increasing"));
        }
        if self.replicates < 100 {
            return Err(Error::config("replicates", format!("{} is below the minimum of 100", self.replicates)));
        }
        if self.batches < 2 || self.batches > self.replicates {
            return Err(Error::config("batches", format!("{} must lie in [2, replicates]", self.batches)));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("estimators", "empty"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::config("epsilon", format!("{} must lie in (0, 0.5)", self.epsilon)));
        }
        if let Some(w) = self.w_set.iter().find(|w| w.len() != self.space.dim()) {
            return Err(Error::config("w_set", format!("{w:?} does not have length {}", self.space.dim())));
        }
        for l in &self.losses {
            match l {
                Loss::Power { a } if !(*a > 0.0) => return Err(Error::config("losses.a", format!("{a} must be positive"))),
                Loss::Indicator { threshold } if !(*threshold >= 0.0) => {
                    return Err(Error::config("losses.threshold", format!("{threshold} must be non-negative")))
                }
                _ => {}
            }
        }
        if let Reference::PeriodicLimit { period } = self.reference {
            if !(period > 0.0) {
                return Err(Error::config("reference.period", format!("{period} must be positive")));
            }
        }
        Ok(())
    }

    /// Information used for whitening at `theta` on `engine`'s grid.
    pub fn reference_info(&self, engine: &IncrementEngine, theta: &Theta) -> Result<InformationBundle> {
        match self.reference {
            Reference::Empirical => empirical_fisher(&engine.moments(theta)?, engine.grid()),
            Reference::PeriodicLimit { period } => {
                let (regime, p) = self.grid.limit_regime(period);
                periodic_limit_fisher(&self.model, theta, p, &regime)?.for_grid(engine.grid())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rules() {
        let g = GridRule::Shrinking { scale: 2.0, exponent: 0.5 }.grid(400).unwrap();
        assert!((g.total_time() - 40.0).abs() < 1e-12);
        let p = GridRule::Pattern {
            offsets: vec![0.1, 0.5, 1.0],
            period: 1.0,
        };
        assert_eq!(p.grid(30).unwrap().n(), 30);
        assert!(matches!(p.grid(31), Err(Error::Config { .. })));
        assert!(GridRule::Shrinking { scale: 1.0, exponent: 1.0 }.validate().is_err());
    }

    #[test]
    fn uniform_rule_is_a_pattern_when_commensurate() {
        let (r, _) = GridRule::Uniform { h: 0.25 }.limit_regime(1.0);
        assert_eq!(r, LimitRegime::Pattern { offsets: vec![0.25, 0.5, 0.75, 1.0] });
        let (r, _) = GridRule::Uniform { h: 0.3 }.limit_regime(1.0);
        assert_eq!(r, LimitRegime::HToZero);
    }

    #[test]
    fn losses() {
        assert_eq!(Loss::Power { a: 2.0 }.eval(&[3.0, 4.0]), 25.0);
        assert_eq!(Loss::Indicator { threshold: 5.0 }.eval(&[3.0, 4.0]), 0.0);
        assert_eq!(Loss::Indicator { threshold: 4.9 }.eval(&[3.0, 4.0]), 1.0);
    }
}
