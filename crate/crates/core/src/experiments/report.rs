//! Study reports: typed tables, asserted checks and a flat CSV view.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::{Est, KsResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Normality,
    Rate,
    Lan,
    Risk,
    PowerIdentity,
    FisherConvergence,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Normality => "normality",
            StudyKind::Rate => "rate",
            StudyKind::Lan => "lan",
            StudyKind::Risk => "risk",
            StudyKind::PowerIdentity => "power-identity",
            StudyKind::FisherConvergence => "fisher-convergence",
        }
    }
}

/// One asserted comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityCell {
    pub n: usize,
    pub total_time: f64,
    pub estimator: String,
    pub failures: usize,
    pub bias: Vec<Est>,
    pub rmse: Vec<Est>,
    /// Empirical covariance of the normalised errors.
    pub covariance: Vec<Vec<Est>>,
    /// `(J^(θ))⁻¹` of the reference information.
    pub target_covariance: Vec<Vec<f64>>,
    /// `max|C − J⁻¹| / max|J⁻¹|`.
    pub covariance_max_rel_dev: f64,
    /// KS of each normalised coordinate against `N(0, (J⁻¹)_kk)`.
    pub ks_marginal: Vec<KsResult>,
    /// Coordinates of `J^{1/2}·e`: sample variance and KS against `N(0,1)`.
    pub whitened_variance: Vec<Est>,
    pub ks_whitened: Vec<KsResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub total_time: f64,
    pub estimator: String,
    pub failures: usize,
    pub rmse_alpha: Est,
    pub rmse_beta: Option<Est>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSlope {
    pub estimator: String,
    /// Weighted slope of log RMSE(α̂) on log T_n.
    pub alpha_slope: Est,
    /// Weighted slope of log RMSE(β̂) on log n; absent when `q = 0`.
    pub beta_slope: Option<Est>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanDeltaRow {
    pub n: usize,
    pub ks: Vec<KsResult>,
    pub mean: Vec<Est>,
    pub variance: Vec<Est>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanRow {
    pub n: usize,
    pub w_index: usize,
    pub w: Vec<f64>,
    pub mean_abs_remainder: Est,
    pub p95_abs_remainder: Est,
    pub mean_exp_log_ratio: Est,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub n: usize,
    pub estimator: String,
    pub loss: String,
    pub lattice_risk: Vec<Est>,
    pub sup_risk: Est,
    pub argsup: usize,
    /// `E[L(ξ)]`, `ξ ~ N(0, (J^(θ))⁻¹)`.
    pub bound: f64,
    pub ratio: Est,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub pair: usize,
    pub z: f64,
    pub closed_form: f64,
    pub monte_carlo: Est,
    /// `(closed − MC)/SE`.
    pub deviation_in_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherRow {
    pub divisions: usize,
    pub h: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Tables {
    Normality { cells: Vec<NormalityCell> },
    Rate { rows: Vec<RateRow>, slopes: Vec<RateSlope> },
    Lan { delta: Vec<LanDeltaRow>, rows: Vec<LanRow> },
    Risk { lattice: Vec<Vec<f64>>, rows: Vec<RiskRow> },
    PowerIdentity { n: usize, rows: Vec<PowerRow> },
    FisherConvergence { rows: Vec<FisherRow>, pattern_rel_error: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: StudyKind,
    pub seed: u64,
    pub replicates: usize,
    pub ladder: Vec<usize>,
    pub checks: Vec<Check>,
    pub tables: Tables,
}

/// Row of the flat table `(n, estimator, metric, value, se)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlatRow {
    pub n: usize,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
    pub se: Option<f64>,
}

fn push(rows: &mut Vec<FlatRow>, n: usize, est: &str, metric: String, e: Est) {
    rows.push(FlatRow {
        n,
        estimator: est.to_string(),
        metric,
        value: e.value,
        se: Some(e.se),
    });
}

fn push_plain(rows: &mut Vec<FlatRow>, n: usize, est: &str, metric: String, v: f64) {
    rows.push(FlatRow {
        n,
        estimator: est.to_string(),
        metric,
        value: v,
        se: None,
    });
}

fn push_ks(rows: &mut Vec<FlatRow>, n: usize, est: &str, name: &str, k: usize, r: &KsResult) {
    push_plain(rows, n, est, format!("{name}_d[{k}]"), r.statistic);
    push_plain(rows, n, est, format!("{name}_p[{k}]"), r.p_value);
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// Deterministic pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation")
    }

    pub fn rows(&self) -> Vec<FlatRow> {
        let mut rows = Vec::new();
        match &self.tables {
            Tables::Normality { cells } => {
                for c in cells {
                    let (n, e) = (c.n, c.estimator.as_str());
                    push_plain(&mut rows, n, e, "failures".into(), c.failures as f64);
                    for (k, b) in c.bias.iter().enumerate() {
                        push(&mut rows, n, e, format!("bias[{k}]"), *b);
                        push(&mut rows, n, e, format!("rmse[{k}]"), c.rmse[k]);
                        push(&mut rows, n, e, format!("whitened_variance[{k}]"), c.whitened_variance[k]);
                        push_ks(&mut rows, n, e, "ks_marginal", k, &c.ks_marginal[k]);
                        push_ks(&mut rows, n, e, "ks_whitened", k, &c.ks_whitened[k]);
                    }
                    for (j, row) in c.covariance.iter().enumerate() {
                        for (k, v) in row.iter().enumerate() {
                            push(&mut rows, n, e, format!("cov[{j},{k}]"), *v);
                            push_plain(&mut rows, n, e, format!("target_cov[{j},{k}]"), c.target_covariance[j][k]);
                        }
                    }
                    push_plain(&mut rows, n, e, "cov_max_rel_dev".into(), c.covariance_max_rel_dev);
                }
            }
            Tables::Rate { rows: rr, slopes } => {
                for r in rr {
                    push_plain(&mut rows, r.n, &r.estimator, "total_time".into(), r.total_time);
                    push(&mut rows, r.n, &r.estimator, "rmse_alpha".into(), r.rmse_alpha);
                    if let Some(b) = r.rmse_beta {
                        push(&mut rows, r.n, &r.estimator, "rmse_beta".into(), b);
                    }
                }
                for s in slopes {
                    push(&mut rows, 0, &s.estimator, "slope_alpha".into(), s.alpha_slope);
                    if let Some(b) = s.beta_slope {
                        push(&mut rows, 0, &s.estimator, "slope_beta".into(), b);
                    }
                }
            }
            Tables::Lan { delta, rows: lr } => {
                for d in delta {
                    for (k, r) in d.ks.iter().enumerate() {
                        push_ks(&mut rows, d.n, "-", "delta_ks", k, r);
                        push(&mut rows, d.n, "-", format!("delta_mean[{k}]"), d.mean[k]);
                        push(&mut rows, d.n, "-", format!("delta_variance[{k}]"), d.variance[k]);
                    }
                }
                for r in lr {
                    let tag = format!("w{}", r.w_index);
                    push(&mut rows, r.n, &tag, "mean_abs_remainder".into(), r.mean_abs_remainder);
                    push(&mut rows, r.n, &tag, "p95_abs_remainder".into(), r.p95_abs_remainder);
                    push(&mut rows, r.n, &tag, "mean_exp_log_ratio".into(), r.mean_exp_log_ratio);
                }
            }
            Tables::Risk { rows: rr, .. } => {
                for r in rr {
                    let e = format!("{}:{}", r.estimator, r.loss);
                    for (j, v) in r.lattice_risk.iter().enumerate() {
                        push(&mut rows, r.n, &e, format!("risk[{j}]"), *v);
                    }
                    push(&mut rows, r.n, &e, "sup_risk".into(), r.sup_risk);
                    push_plain(&mut rows, r.n, &e, "bound".into(), r.bound);
                    push(&mut rows, r.n, &e, "ratio".into(), r.ratio);
                }
            }
            Tables::PowerIdentity { n, rows: pr } => {
                for r in pr {
                    let e = format!("pair{}", r.pair);
                    push_plain(&mut rows, *n, &e, format!("closed_form[z={}]", r.z), r.closed_form);
                    push(&mut rows, *n, &e, format!("monte_carlo[z={}]", r.z), r.monte_carlo);
                }
            }
            Tables::FisherConvergence { rows: fr, pattern_rel_error } => {
                for r in fr {
                    push_plain(&mut rows, r.divisions, "-", "rel_error".into(), r.rel_error);
                }
                if let Some(p) = pattern_rel_error {
                    push_plain(&mut rows, 0, "pattern", "rel_error".into(), *p);
                }
            }
        }
        rows
    }

    /// Flat table as CSV with LF line endings; a missing SE is an empty cell.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["n", "estimator", "metric", "value", "se"])?;
        for r in self.rows() {
            wr.write_record([
                r.n.to_string(),
                r.estimator,
                r.metric,
                format!("{:?}", r.value),
                r.se.map(|s| format!("{s:?}")).unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
