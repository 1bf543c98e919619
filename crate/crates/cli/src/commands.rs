//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde::Serialize;
use signoise_core::estimate::{
    bayes_estimate, mle_closed_form, mle_linear_closed_form, mle_numeric, mle_scaled_noise_closed_form, EstimateResult,
    LinearFit, PosteriorSummary, Prior, ScaledFit,
};
use signoise_core::experiments::{
    fisher_convergence_study, information_rel_error, lan_study, normality_study, power_identity_check, rate_study,
    risk_study, StudyReport,
};
use signoise_core::increments::IncrementEngine;
use signoise_core::information::{empirical_fisher, periodic_limit_fisher, InformationBundle, LimitRegime};
use signoise_core::model::{NoiseFamily, Theta};
use signoise_core::sampling::TimeGrid;
use signoise_core::simulate::{simulate_replicate, IncrementSample};
use signoise_core::{Error, Result};

use crate::config::{check_assumptions, Loaded, Method, StudySection};
use crate::io::{create_dir, read, sample_files, write_csv, write_json, Provenance};

/// Resolved inputs shared by every subcommand.
pub struct Context {
    pub loaded: Loaded,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    fn provenance(&self, command: &str) -> Provenance {
        Provenance::new(command, &self.loaded.digest, self.seed)
    }
}

#[derive(Serialize)]
struct SampleMeta<'a> {
    replicate: u64,
    n: usize,
    grid_digest: &'a str,
    theta_true: &'a Theta,
    signal: String,
    noise: String,
}

pub fn simulate(ctx: &Context, count: usize) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::config("--count", "must be at least 1"));
    }
    let cfg = &ctx.loaded.cfg;
    let model = cfg.model()?;
    let space = cfg.space(&model)?;
    let grid = cfg.grid()?;
    let theta = cfg.theta(&space)?;
    check_assumptions(&model, &space, grid.total_time())?;
    let engine = IncrementEngine::new(&model, &grid)?;
    create_dir(&ctx.out)?;
    let prov = ctx.provenance("simulate");
    let mut written = Vec::new();
    for r in 0..count as u64 {
        let sample = simulate_replicate(&engine, &theta, ctx.seed, r)?;
        let mut buf = Vec::new();
        sample.write_csv(&grid, &mut buf)?;
        let name = if count == 1 { "sample.csv".to_string() } else { format!("sample_{r:04}.csv") };
        let path = ctx.out.join(name);
        let meta = SampleMeta {
            replicate: r,
            n: grid.n(),
            grid_digest: &sample.grid_digest,
            theta_true: &theta,
            signal: model.signal_name(),
            noise: model.noise_name(),
        };
        write_csv(&path, &buf, &prov, &meta)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
#[serde(untagged)]
enum ClosedFit {
    Linear(LinearFit),
    Scaled(ScaledFit),
}

#[derive(Serialize)]
struct EstimateDoc {
    sample: String,
    method: &'static str,
    n: usize,
    total_time: f64,
    grid_digest: String,
    estimate: EstimateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<ClosedFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    posterior: Option<PosteriorSummary>,
}

impl EstimateDoc {
    /// Point estimate and standard errors reported in the summary table.
    fn point(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.posterior {
            Some(p) => (p.mean.to_flat(), p.sd.clone()),
            None => {
                let d = self.estimate.theta_hat.dim();
                let se = self.estimate.stderr_diag.clone().unwrap_or_else(|| vec![f64::NAN; d]);
                (self.estimate.theta_hat.to_flat(), se)
            }
        }
    }

    fn converged(&self) -> bool {
        self.estimate.converged && self.posterior.as_ref().is_none_or(|p| p.converged)
    }
}

fn estimate_one(ctx: &Context, path: &Path, method: Method) -> Result<EstimateDoc> {
    let cfg = &ctx.loaded.cfg;
    let model = cfg.model()?;
    let space = cfg.space(&model)?;
    let (sample, grid) = IncrementSample::read_csv(read(path)?.as_slice())?;
    check_assumptions(&model, &space, grid.total_time())?;
    let engine = IncrementEngine::new(&model, &grid)?;
    let y = &sample.y;
    let opts = &cfg.estimate.mle;
    let (estimate, closed_form, posterior) = match method {
        Method::Mle => (mle_numeric(&engine, &space, y, opts)?, None, None),
        Method::MleClosed => {
            let est = mle_closed_form(&engine, y).map_err(|e| match e {
                Error::Unsupported(m) => Error::config("estimate.method", m),
                other => other,
            })?;
            let (design, base) = (engine.design().unwrap(), engine.noise_base().unwrap());
            let fit = match model.noise {
                NoiseFamily::Scaled(_) => ClosedFit::Scaled(mle_scaled_noise_closed_form(design, base, y)?),
                _ => ClosedFit::Linear(mle_linear_closed_form(design, base, y)?),
            };
            (est, Some(fit), None)
        }
        Method::Bayes => {
            if space.dim() > cfg.estimate.bayes.max_dim {
                return Err(Error::DimensionGuard {
                    dim: space.dim(),
                    max: cfg.estimate.bayes.max_dim,
                });
            }
            let anchor = mle_numeric(&engine, &space, y, opts)?;
            let post = bayes_estimate(&engine, &space, y, &Prior::Uniform, &cfg.estimate.bayes, &anchor)?;
            (anchor, None, Some(post))
        }
    };
    Ok(EstimateDoc {
        sample: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        method: method.name(),
        n: grid.n(),
        total_time: grid.total_time(),
        grid_digest: grid.digest(),
        estimate,
        closed_form,
        posterior,
    })
}

#[derive(Serialize)]
struct SummaryMeta {
    method: &'static str,
    samples: usize,
}

/// Estimates one sample file, or every sample CSV in a directory plus a
/// `summary.csv` table.
pub fn estimate(ctx: &Context, input: &Path, method: Option<Method>) -> Result<Vec<PathBuf>> {
    let method = method.unwrap_or(ctx.loaded.cfg.estimate.method);
    let files = if input.is_dir() {
        let f = sample_files(input)?;
        if f.is_empty() {
            return Err(Error::config("--input", format!("no sample CSV files in {}", input.display())));
        }
        f
    } else {
        vec![input.to_path_buf()]
    };
    create_dir(&ctx.out)?;
    let prov = ctx.provenance("estimate");
    let mut written = Vec::new();
    let mut docs = Vec::new();
    for f in &files {
        let doc = estimate_one(ctx, f, method)?;
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let path = ctx.out.join(format!("{stem}.estimate.json"));
        write_json(&path, &prov, &doc)?;
        written.push(path);
        docs.push(doc);
    }
    if input.is_dir() {
        let d = docs[0].estimate.theta_hat.dim();
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["sample".to_string(), "method".into(), "converged".into(), "log_lik".into()];
        header.extend((0..d).map(|k| format!("theta[{k}]")));
        header.extend((0..d).map(|k| format!("se[{k}]")));
        wr.write_record(&header)?;
        for doc in &docs {
            let (theta, se) = doc.point();
            let mut row = vec![
                doc.sample.clone(),
                doc.method.to_string(),
                doc.converged().to_string(),
                format!("{:?}", doc.estimate.log_lik_at_hat),
            ];
            row.extend(theta.iter().chain(&se).map(|v| format!("{v:?}")));
            wr.write_record(&row)?;
        }
        let bytes = wr.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        let path = ctx.out.join("summary.csv");
        write_csv(
            &path,
            &bytes,
            &prov,
            &SummaryMeta {
                method: method.name(),
                samples: docs.len(),
            },
        )?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct StudyMeta<'a> {
    study: &'a str,
    passed: bool,
}

/// Runs the configured study and returns its report after writing
/// `<study>.json` and `<study>.csv`.
pub fn verify(ctx: &Context) -> Result<StudyReport> {
    let cfg = &ctx.loaded.cfg;
    let study = cfg.study()?;
    let report = match study {
        StudySection::Normality(mc) | StudySection::Rate(mc) | StudySection::Lan(mc) | StudySection::Risk(mc) => {
            let sc = cfg.study_config(mc, ctx.seed)?;
            let horizon = mc.grid.grid(sc.ladder[0]).map_err(|e| Error::config("study.grid", e.to_string()))?;
            check_assumptions(&sc.model, &sc.space, horizon.total_time())?;
            match study {
                StudySection::Normality(_) => normality_study(&sc)?,
                StudySection::Rate(_) => rate_study(&sc)?,
                StudySection::Lan(_) => lan_study(&sc)?,
                _ => risk_study(&sc)?,
            }
        }
        StudySection::PowerIdentity(p) => {
            let model = cfg.model()?;
            let space = cfg.space(&model)?;
            let grid = cfg.grid()?;
            check_assumptions(&model, &space, grid.total_time())?;
            let pc = cfg.power_config(p, &space, ctx.seed)?;
            power_identity_check(&IncrementEngine::new(&model, &grid)?, &space, &pc)?
        }
        StudySection::FisherConvergence(c) => {
            let model = cfg.model()?;
            let space = cfg.space(&model)?;
            check_assumptions(&model, &space, c.period)?;
            fisher_convergence_study(&model, &cfg.convergence_config(c, &space)?)?
        }
    };
    create_dir(&ctx.out)?;
    let prov = ctx.provenance("verify");
    let name = study.name();
    write_json(&ctx.out.join(format!("{name}.json")), &prov, &report)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_csv(
        &ctx.out.join(format!("{name}.csv")),
        &buf,
        &prov,
        &StudyMeta {
            study: name,
            passed: report.passed(),
        },
    )?;
    Ok(report)
}

#[derive(Serialize)]
struct FisherDoc {
    n: usize,
    total_time: f64,
    grid_digest: String,
    theta: Theta,
    empirical: InformationBundle,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit: Option<InformationBundle>,
    /// `max|J_emp − J_lim| / max|J_lim|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    limit_rel_error: Option<f64>,
}

pub fn fisher(ctx: &Context) -> Result<PathBuf> {
    let cfg = &ctx.loaded.cfg;
    let model = cfg.model()?;
    let space = cfg.space(&model)?;
    let grid = cfg.grid()?;
    let theta = cfg.theta(&space)?;
    check_assumptions(&model, &space, grid.total_time())?;
    let empirical = empirical_fisher(&IncrementEngine::new(&model, &grid)?.moments(&theta)?, &grid)?;
    let limit = match &cfg.fisher {
        Some(f) => {
            let regime = match &f.pattern {
                Some(offsets) => LimitRegime::Pattern { offsets: offsets.clone() },
                None => LimitRegime::HToZero,
            };
            let lim = periodic_limit_fisher(&model, &theta, f.period, &regime)
                .map_err(|e| Error::config("fisher", e.to_string()))?;
            Some(lim.for_grid(&grid)?)
        }
        None => None,
    };
    let doc = FisherDoc {
        n: grid.n(),
        total_time: grid.total_time(),
        grid_digest: grid.digest(),
        theta,
        limit_rel_error: limit.as_ref().map(|l| information_rel_error(&empirical, l)),
        empirical,
        limit,
    };
    create_dir(&ctx.out)?;
    let path = ctx.out.join("fisher.json");
    write_json(&path, &ctx.provenance("fisher"), &doc)?;
    Ok(path)
}

#[derive(Serialize)]
struct GridMeta {
    n: usize,
    total_time: f64,
    max_delay: f64,
    grid_digest: String,
}

pub fn grid(ctx: &Context) -> Result<PathBuf> {
    let grid: TimeGrid = ctx.loaded.cfg.grid()?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    create_dir(&ctx.out)?;
    let path = ctx.out.join("grid.csv");
    let meta = GridMeta {
        n: grid.n(),
        total_time: grid.total_time(),
        max_delay: grid.max_delay(),
        grid_digest: grid.digest(),
    };
    write_csv(&path, &buf, &ctx.provenance("grid"), &meta)?;
    Ok(path)
}
