//! TOML run configuration. Every table rejects unknown keys; semantic
//! errors carry the dotted path of the offending key.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use signoise_core::estimate::{BayesOptions, MleOptions, Prior};
use signoise_core::experiments::{
    Criteria, Estimator, FisherConvergenceConfig, GridRule, Loss, PowerIdentityConfig, PowerPair, Reference, StudyConfig,
};
use signoise_core::model::{
    validate_assumptions, BasisFn, Bound, ModelSpec, NoiseFamily, ParameterSpace, Probe, Profile, SignalFamily, Theta,
    DEFAULT_VARIANCE_FLOOR,
};
use signoise_core::sampling::TimeGrid;
use signoise_core::{Error, Result};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub space: SpaceSection,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub theta: Option<ThetaSection>,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub fisher: Option<FisherSection>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub signal: SignalSection,
    pub noise: NoiseSection,
    #[serde(default)]
    pub variance_floor: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSection {
    Linear { basis: Vec<BasisFn> },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSection {
    Known { profile: Profile },
    Scaled { profile: Profile },
    LogLinear { basis: Vec<BasisFn> },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub alpha: Vec<[f64; 2]>,
    #[serde(default)]
    pub beta: Vec<[f64; 2]>,
    #[serde(default)]
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSection {
    Uniform { n: usize, h: f64 },
    Pattern { offsets: Vec<f64>, period: f64, cycles: usize },
    /// `t_i = horizon·(i/n)^power`.
    Power { n: usize, horizon: f64, power: f64 },
    Instants { instants: Vec<f64> },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSection {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mle,
    MleClosed,
    Bayes,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::MleClosed => "mle-closed",
            Method::Bayes => "bayes",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub mle: MleOptions,
    #[serde(default)]
    pub bayes: BayesOptions,
}

fn default_method() -> Method {
    Method::Mle
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            method: Method::Mle,
            mle: MleOptions::default(),
            bayes: BayesOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StudySection {
    Normality(MonteCarloSection),
    Rate(MonteCarloSection),
    Lan(MonteCarloSection),
    Risk(MonteCarloSection),
    PowerIdentity(PowerSection),
    FisherConvergence(ConvergenceSection),
}

impl StudySection {
    pub fn name(&self) -> &'static str {
        match self {
            StudySection::Normality(_) => "normality",
            StudySection::Rate(_) => "rate",
            StudySection::Lan(_) => "lan",
            StudySection::Risk(_) => "risk",
            StudySection::PowerIdentity(_) => "power-identity",
            StudySection::FisherConvergence(_) => "fisher-convergence",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub grid: GridRule,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_losses")]
    pub losses: Vec<Loss>,
    #[serde(default = "default_reference")]
    pub reference: Reference,
    #[serde(default)]
    pub w_set: Vec<Vec<f64>>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default)]
    pub criteria: Criteria,
}

fn default_ladder() -> Vec<usize> {
    vec![100, 400, 1600]
}

fn default_replicates() -> usize {
    1000
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Mle]
}

fn default_losses() -> Vec<Loss> {
    vec![Loss::Power { a: 2.0 }]
}

fn default_reference() -> Reference {
    Reference::Empirical
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_batches() -> usize {
    20
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSection {
    pub theta: ThetaSection,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub pairs: Vec<PairSection>,
    pub z: Vec<f64>,
    #[serde(default = "default_power_replicates")]
    pub replicates: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

fn default_power_replicates() -> usize {
    100_000
}

fn default_sigmas() -> f64 {
    4.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub period: f64,
    pub divisions: Vec<usize>,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
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

/// Optional periodic limit reported next to the empirical information.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherSection {
    pub period: f64,
    /// Offsets of a fixed-delay pattern; `h → 0` when absent.
    #[serde(default)]
    pub pattern: Option<Vec<f64>>,
}

/// A parsed configuration and the SHA-256 of its bytes.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub cfg: RunConfig,
    pub digest: String,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::config("--config", "file is not UTF-8"))?;
    let cfg = parse(&text)?;
    Ok(Loaded {
        cfg,
        digest: crate::io::sha256_hex(&bytes),
    })
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| toml_error(text, "<document>", &e))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        // unknown and missing fields name the key in backticks
        let key = match inner.message().split('`').nth(1) {
            Some(field) if inner.message().contains(" field ") => {
                if path == "." {
                    field.to_string()
                } else if path.rsplit('.').next() == Some(field) {
                    path
                } else {
                    format!("{path}.{field}")
                }
            }
            _ => path,
        };
        toml_error(text, &key, &inner)
    })
}

fn toml_error(text: &str, key: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let message = match line {
        Some(l) => format!("{} (line {l})", e.message()),
        None => e.message().to_string(),
    };
    Error::config(key, message)
}

fn bounds(key: &str, raw: &[[f64; 2]]) -> Result<Vec<Bound>> {
    raw.iter()
        .enumerate()
        .map(|(k, [lo, hi])| {
            if lo.is_finite() && hi.is_finite() && lo < hi {
                Ok(Bound::new(*lo, *hi))
            } else {
                Err(Error::config(format!("{key}[{k}]"), format!("[{lo}, {hi}] is not a bounded interval")))
            }
        })
        .collect()
}

impl RunConfig {
    pub fn model(&self) -> Result<ModelSpec> {
        let signal = match &self.model.signal {
            SignalSection::Linear { basis } => SignalFamily::Linear(basis.clone()),
        };
        let noise = match &self.model.noise {
            NoiseSection::Known { profile } => NoiseFamily::Known(profile.clone()),
            NoiseSection::Scaled { profile } => NoiseFamily::Scaled(profile.clone()),
            NoiseSection::LogLinear { basis } => NoiseFamily::LogLinear(basis.clone()),
        };
        let m = ModelSpec::new(signal, noise).map_err(|e| Error::config("model", e.to_string()))?;
        m.with_variance_floor(self.model.variance_floor.unwrap_or(DEFAULT_VARIANCE_FLOOR))
            .map_err(|e| Error::config("model.variance_floor", e.to_string()))
    }

    pub fn space(&self, model: &ModelSpec) -> Result<ParameterSpace> {
        let a = bounds("space.alpha", &self.space.alpha)?;
        let b = bounds("space.beta", &self.space.beta)?;
        let space = match self.space.margin {
            Some(m) => ParameterSpace::with_margin(a, b, m),
            None => ParameterSpace::new(a, b),
        }
        .map_err(|e| Error::config("space", e.to_string()))?;
        model.check_compatible(&space).map_err(|e| Error::config("space", e.to_string()))?;
        Ok(space)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let g = self.grid.as_ref().ok_or_else(|| Error::config("grid", "this command needs a [grid] table"))?;
        match g {
            GridSection::Uniform { n, h } => TimeGrid::uniform(*n, *h),
            GridSection::Pattern { offsets, period, cycles } => TimeGrid::periodic_pattern(offsets, *period, *cycles),
            GridSection::Power { n, horizon, power } => {
                if !(*power > 0.0 && *horizon > 0.0) {
                    return Err(Error::config("grid", "power and horizon must be positive"));
                }
                TimeGrid::quantile(|u| horizon * u.powf(*power), *n)
            }
            GridSection::Instants { instants } => TimeGrid::from_instants(instants.clone()),
        }
        .map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn theta(&self, space: &ParameterSpace) -> Result<Theta> {
        let t = self.theta.as_ref().ok_or_else(|| Error::config("theta", "this command needs a [theta] table"))?;
        to_theta("theta", t, space)
    }

    pub fn study(&self) -> Result<&StudySection> {
        self.study.as_ref().ok_or_else(|| Error::config("study", "verify needs a [study] table"))
    }

    pub fn study_config(&self, mc: &MonteCarloSection, seed: u64) -> Result<StudyConfig> {
        let model = self.model()?;
        let space = self.space(&model)?;
        let theta = self.theta(&space)?;
        if let Reference::PeriodicLimit { period } = mc.reference {
            model
                .check_periodic(&theta, period, 1e-9)
                .map_err(|e| Error::config("study.reference", e.to_string()))?;
        }
        let mut cfg = StudyConfig::new(model, space, mc.grid.clone(), theta);
        cfg.ladder = mc.ladder.clone();
        cfg.replicates = mc.replicates;
        cfg.seed = seed;
        cfg.estimators = mc.estimators.clone();
        cfg.losses = mc.losses.clone();
        cfg.reference = mc.reference.clone();
        cfg.w_set = mc.w_set.clone();
        cfg.epsilon = mc.epsilon;
        cfg.batches = mc.batches;
        cfg.mle = self.estimate.mle.clone();
        cfg.bayes = self.estimate.bayes.clone();
        cfg.prior = Prior::Uniform;
        cfg.criteria = mc.criteria.clone();
        cfg.validate().map_err(|e| prefix("study", e))?;
        Ok(cfg)
    }

    pub fn power_config(&self, p: &PowerSection, space: &ParameterSpace, seed: u64) -> Result<PowerIdentityConfig> {
        let pairs = p
            .pairs
            .iter()
            .enumerate()
            .map(|(k, pair)| {
                let theta = to_theta(&format!("study.pairs[{k}].theta"), &pair.theta, space)?;
                if pair.mu.len() != space.dim() {
                    return Err(Error::config(format!("study.pairs[{k}].mu"), format!("needs {} entries", space.dim())));
                }
                if !space.contains(&theta.shifted(&pair.mu)) {
                    return Err(Error::config(format!("study.pairs[{k}].mu"), "theta + mu leaves the parameter box"));
                }
                Ok(PowerPair { theta, mu: pair.mu.clone() })
            })
            .collect::<Result<_>>()?;
        Ok(PowerIdentityConfig {
            pairs,
            z: p.z.clone(),
            replicates: p.replicates,
            seed,
            batches: p.batches,
            sigmas: p.sigmas,
        })
    }

    pub fn convergence_config(&self, c: &ConvergenceSection, space: &ParameterSpace) -> Result<FisherConvergenceConfig> {
        Ok(FisherConvergenceConfig {
            theta: self.theta(space)?,
            period: c.period,
            divisions: c.divisions.clone(),
            cycles: c.cycles,
            pattern: c.pattern.clone(),
            pattern_cycles: c.pattern_cycles,
            final_tol: c.final_tol,
            pattern_tol: c.pattern_tol,
        })
    }
}

fn to_theta(key: &str, t: &ThetaSection, space: &ParameterSpace) -> Result<Theta> {
    if t.alpha.len() != space.p() {
        return Err(Error::config(format!("{key}.alpha"), format!("needs {} entries", space.p())));
    }
    if t.beta.len() != space.q() {
        return Err(Error::config(format!("{key}.beta"), format!("needs {} entries", space.q())));
    }
    let theta = Theta::new(t.alpha.clone(), t.beta.clone());
    if !space.contains(&theta) {
        return Err(Error::config(key, format!("{theta} is not inside the parameter box")));
    }
    Ok(theta)
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config { key, message } => Error::config(format!("{section}.{key}"), message),
        other => other,
    }
}

/// Runs the boundedness checks on a coarse probe lattice over
/// `[0, horizon]`; a violated floor is reported as the assumption error.
pub fn check_assumptions(model: &ModelSpec, space: &ParameterSpace, horizon: f64) -> Result<()> {
    let d = space.p().max(space.q()).max(1) as u32;
    let per_axis = (2..=16usize).rev().find(|k| k.pow(d) <= 4096).unwrap_or(2);
    let times = (0..=128).map(|k| horizon * k as f64 / 128.0).collect();
    let report = validate_assumptions(model, space, &Probe::lattice(space, per_axis, times)?);
    if let Some(msg) = report.failures.iter().find(|f| f.contains("A2")) {
        return Err(Error::config("model.noise", msg.clone()));
    }
    match report.failures.first() {
        Some(msg) => Err(Error::config("model", msg.clone())),
        None => Ok(()),
    }
}
