//! Monte Carlo verification studies. Every study is a pure function of its
//! configuration and seed; replicates run in parallel and are reduced in
//! replicate order, so reports do not depend on the worker count.

mod config;
mod identity;
mod report;
mod studies;

pub use config::{Criteria, Estimator, GridRule, Loss, Reference, StudyConfig};
pub use identity::{
    fisher_convergence_study, information_rel_error, power_identity_check, FisherConvergenceConfig, PowerIdentityConfig,
    PowerPair,
};
pub use report::{
    Check, FisherRow, FlatRow, LanDeltaRow, LanRow, NormalityCell, PowerRow, RateRow, RateSlope, RiskRow, StudyKind,
    StudyReport, Tables,
};
pub use studies::{
    default_w_set, gaussian_expected_loss, lan_study, normality_study, rate_study, risk_lattice, risk_study, stream_id,
};
