//! Fisher information blocks, identifiability sums, normalising matrices and
//! the periodic limits of the information sums.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::{log_moments, IncrementEngine, IncrementMoments};
use crate::model::{ModelSpec, Theta};
use crate::numeric::{block_diag, matrix_serde, pairwise_sum, spd_inverse, spd_inverse_sqrt, spd_sqrt};
use crate::quadrature::{integrate_vec_pieces, QuadOptions};
use crate::sampling::TimeGrid;

pub const EIG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherSource {
    Empirical,
    PeriodicLimit,
}

/// `J_p`, `J_q` and the normalisers `φ_n = (T_n J_p)^{-1/2}`,
/// `ψ_n = (n J_q)^{-1/2}`, `Φ_n = diag[φ_n, ψ_n]` for one grid size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InformationBundle {
    #[serde(with = "matrix_serde")]
    pub jp: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub jq: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub phi_n: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub psi_n: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub big_phi: DMatrix<f64>,
    pub source: FisherSource,
    pub n: usize,
    pub total_time: f64,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

impl InformationBundle {
    pub fn from_blocks(
        jp: DMatrix<f64>,
        jq: DMatrix<f64>,
        source: FisherSource,
        n: usize,
        total_time: f64,
    ) -> Result<Self> {
        if n == 0 || !(total_time > 0.0) {
            return Err(Error::Invalid(format!(
                "normalisers need n >= 1 and T > 0 (n = {n}, T = {total_time})"
            )));
        }
        let jp = symmetrize(jp);
        let jq = symmetrize(jq);
        let phi_n = spd_inverse_sqrt(&(&jp * total_time), EIG_FLOOR * total_time, "Jp")?;
        let psi_n = spd_inverse_sqrt(&(&jq * n as f64), EIG_FLOOR * n as f64, "Jq")?;
        let big_phi = block_diag(&phi_n, &psi_n);
        Ok(Self {
            jp,
            jq,
            phi_n,
            psi_n,
            big_phi,
            source,
            n,
            total_time,
        })
    }

    /// Same information blocks with normalisers for another grid.
    pub fn for_grid(&self, grid: &TimeGrid) -> Result<Self> {
        Self::from_blocks(self.jp.clone(), self.jq.clone(), self.source, grid.n(), grid.total_time())
    }

    pub fn p(&self) -> usize {
        self.jp.nrows()
    }

    pub fn q(&self) -> usize {
        self.jq.nrows()
    }

    /// `J^(θ) = diag[J_p, J_q]`.
    pub fn j_theta(&self) -> DMatrix<f64> {
        block_diag(&self.jp, &self.jq)
    }

    /// `(J^(θ))^{-1}`, the limiting covariance of the normalised errors.
    pub fn asymptotic_covariance(&self) -> Result<DMatrix<f64>> {
        Ok(block_diag(
            &spd_inverse(&self.jp, EIG_FLOOR, "Jp")?,
            &spd_inverse(&self.jq, EIG_FLOOR, "Jq")?,
        ))
    }

    /// Rates `(√T_n, …, √n, …)` of the normalised errors.
    pub fn rates(&self) -> Vec<f64> {
        let mut r = vec![self.total_time.sqrt(); self.p()];
        r.extend(std::iter::repeat((self.n as f64).sqrt()).take(self.q()));
        r
    }

    /// Square roots of the diagonal of `(diag(T_n, n)·J)^{-1}`.
    pub fn stderr_diag(&self) -> Result<Vec<f64>> {
        let cov = self.asymptotic_covariance()?;
        Ok(self.rates().iter().enumerate().map(|(k, r)| cov[(k, k)].sqrt() / r).collect())
    }

    /// Parameter displacement `wΦ_n` for a local parameter `w`.
    pub fn shift(&self, w: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(w);
        (self.big_phi.transpose() * v).as_slice().to_vec()
    }
}

/// `J_p = (1/T_n) Σ ∇F_iᵀ∇F_i / G_i²` and
/// `J_q = (1/2n) Σ (∇ ln G_i²)ᵀ(∇ ln G_i²)`.
pub fn fisher_blocks(moments: &IncrementMoments, total_time: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = moments.n();
    let (p, q) = (moments.p(), moments.q());
    let lm = log_moments(moments);
    let jp = DMatrix::from_fn(p, p, |j, k| {
        let terms: Vec<f64> = (0..n)
            .map(|i| moments.grad_f[(i, j)] * moments.grad_f[(i, k)] / moments.g2[i])
            .collect();
        pairwise_sum(&terms) / total_time
    });
    let jq = DMatrix::from_fn(q, q, |j, k| {
        let terms: Vec<f64> = (0..n).map(|i| lm.grad_ln_g2[(i, j)] * lm.grad_ln_g2[(i, k)]).collect();
        pairwise_sum(&terms) / (2.0 * n as f64)
    });
    (jp, jq)
}

pub fn empirical_fisher(moments: &IncrementMoments, grid: &TimeGrid) -> Result<InformationBundle> {
    if moments.n() != grid.n() {
        return Err(Error::Shape(format!("moments for n = {}, grid has n = {}", moments.n(), grid.n())));
    }
    let (jp, jq) = fisher_blocks(moments, grid.total_time());
    InformationBundle::from_blocks(jp, jq, FisherSource::Empirical, grid.n(), grid.total_time())
}

/// `μ_p = (1/T_n) Σ (F_i − F_i′)² / Δ_i` and `μ_q = (1/n) Σ (G_i² − G_i²′)² / Δ_i²`.
pub fn identifiability(a: &IncrementMoments, b: &IncrementMoments, grid: &TimeGrid) -> Result<(f64, f64)> {
    if a.n() != grid.n() || b.n() != grid.n() {
        return Err(Error::Shape("identifiability needs both moment sets on the grid".into()));
    }
    let d = grid.delays();
    let tp: Vec<f64> = (0..grid.n()).map(|i| (a.f[i] - b.f[i]).powi(2) / d[i]).collect();
    let tq: Vec<f64> = (0..grid.n()).map(|i| ((a.g2[i] - b.g2[i]) / d[i]).powi(2)).collect();
    Ok((pairwise_sum(&tp) / grid.total_time(), pairwise_sum(&tq) / grid.n() as f64))
}

/// How the grid behaves inside one period in the limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LimitRegime {
    /// Mesh shrinking to zero: period integrals.
    HToZero,
    /// Fixed sampling pattern repeated every period.
    Pattern { offsets: Vec<f64> },
}

const PERIODICITY_TOL: f64 = 1e-9;

/// Limits of the information sums for a `period`-periodic model. The
/// returned bundle is normalised for one period (`n = ν` or 1, `T = P`);
/// use [`InformationBundle::for_grid`] for a concrete grid.
pub fn periodic_limit_fisher(
    model: &ModelSpec,
    theta: &Theta,
    period: f64,
    regime: &LimitRegime,
) -> Result<InformationBundle> {
    let scale = 1.0
        + (0..8)
            .map(|k| {
                let t = period * k as f64 / 8.0;
                model.eval_signal(&theta.alpha, t).map(f64::abs).unwrap_or(0.0)
                    + model.eval_noise_var(&theta.beta, t).unwrap_or(0.0)
            })
            .fold(0.0, f64::max);
    model.check_periodic(theta, period, PERIODICITY_TOL * scale)?;
    match regime {
        LimitRegime::HToZero => {
            let (p, q) = (model.p(), model.q());
            let mut err = None;
            let mut gf = vec![0.0; p];
            let mut gs = vec![0.0; q];
            let out = integrate_vec_pieces(
                |t, out| {
                    let s2 = model.eval_noise_var(&theta.beta, t);
                    let r = s2.and_then(|s2| {
                        model.grad_signal_into(&theta.alpha, t, &mut gf)?;
                        model.grad_noise_var_into(&theta.beta, t, &mut gs)?;
                        Ok(s2)
                    });
                    match r {
                        Ok(s2) => {
                            for j in 0..p {
                                for k in 0..p {
                                    out[j * p + k] = gf[j] * gf[k] / s2;
                                }
                            }
                            for j in 0..q {
                                for k in 0..q {
                                    out[p * p + j * q + k] = gs[j] * gs[k] / (s2 * s2);
                                }
                            }
                        }
                        Err(e) => {
                            if err.is_none() {
                                err = Some(e);
                            }
                            out.iter_mut().for_each(|o| *o = 0.0);
                        }
                    }
                },
                &model.quadrature_points(0.0, period),
                p * p + q * q,
                &QuadOptions::default(),
            )
            .map_err(|o| Error::Quadrature {
                interval: 0,
                estimate: o.values.first().copied().unwrap_or(f64::NAN),
                error: o.error,
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            let jp = DMatrix::from_row_slice(p, p, &out.values[..p * p]) / period;
            let jq = DMatrix::from_row_slice(q, q, &out.values[p * p..]) / (2.0 * period);
            InformationBundle::from_blocks(jp, jq, FisherSource::PeriodicLimit, 1, period)
        }
        LimitRegime::Pattern { offsets } => {
            let grid = TimeGrid::periodic_pattern(offsets, period, 1)?;
            let m = IncrementEngine::new(model, &grid)?.moments(theta)?;
            let (jp, jq) = fisher_blocks(&m, period);
            InformationBundle::from_blocks(jp, jq, FisherSource::PeriodicLimit, grid.n(), period)
        }
    }
}

/// `(Φ_n^(θ))^{-1} Φ_n^(θ')`.
pub fn transfer_matrix(at: &InformationBundle, other: &InformationBundle) -> Result<DMatrix<f64>> {
    let inv = block_diag(
        &spd_sqrt(&(&at.jp * at.total_time), EIG_FLOOR, "Jp")?,
        &spd_sqrt(&(&at.jq * at.n as f64), EIG_FLOOR, "Jq")?,
    );
    Ok(inv * &other.big_phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasisFn, NoiseFamily, Profile, SignalFamily};
    use proptest::prelude::*;

    fn drift_only(basis: Vec<BasisFn>) -> ModelSpec {
        ModelSpec::new(SignalFamily::Linear(basis), NoiseFamily::Known(Profile::constant(1.0))).unwrap()
    }

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).abs().max() <= tol * (1.0 + b.abs().max())
    }

    #[test]
    fn constant_drift_unit_information() {
        let m = drift_only(vec![BasisFn::Constant]);
        let g = TimeGrid::quantile(|u| 4.0 * u * u, 37).unwrap();
        let mo = IncrementEngine::new(&m, &g).unwrap().moments(&Theta::new(vec![0.3], vec![])).unwrap();
        let b = empirical_fisher(&mo, &g).unwrap();
        assert!((b.jp[(0, 0)] - 1.0).abs() < 1e-14);
        let check = &b.phi_n * (&b.jp * g.total_time()) * &b.phi_n;
        assert!(close(&check, &DMatrix::identity(1, 1), 1e-10));
    }

    #[test]
    fn scaled_noise_jq_is_half_inverse_square() {
        let m = ModelSpec::new(SignalFamily::Linear(vec![BasisFn::Constant]), NoiseFamily::Scaled(Profile::constant(1.0)))
            .unwrap();
        let g = TimeGrid::quantile(|u| u.powf(1.3) * 5.0, 50).unwrap();
        for beta in [0.5, 1.0, 3.0] {
            let mo = IncrementEngine::new(&m, &g).unwrap().moments(&Theta::new(vec![1.0], vec![beta])).unwrap();
            let b = empirical_fisher(&mo, &g).unwrap();
            assert!((b.jq[(0, 0)] - 0.5 / (beta * beta)).abs() < 1e-14);
            let check = &b.psi_n * (&b.jq * g.n() as f64) * &b.psi_n;
            assert!(close(&check, &DMatrix::identity(1, 1), 1e-10));
        }
    }

    #[test]
    fn trig_basis_tends_to_period_average() {
        let m = drift_only(vec![BasisFn::Constant, BasisFn::Cos { freq: 1.0 }]);
        let g = TimeGrid::uniform(200 * 256, 1.0 / 256.0).unwrap();
        let mo = IncrementEngine::new(&m, &g).unwrap().moments(&Theta::new(vec![0.0, 0.0], vec![])).unwrap();
        let b = empirical_fisher(&mo, &g).unwrap();
        let target = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        assert!(close(&b.jp, &target, 1e-4));
    }

    #[test]
    fn singular_block_is_reported() {
        let m = drift_only(vec![BasisFn::Constant, BasisFn::Constant]);
        let g = TimeGrid::uniform(10, 0.1).unwrap();
        let mo = IncrementEngine::new(&m, &g).unwrap().moments(&Theta::new(vec![1.0, 1.0], vec![])).unwrap();
        assert!(matches!(
            empirical_fisher(&mo, &g),
            Err(Error::SingularInformation { block: "Jp", .. })
        ));
    }

    #[test]
    fn identifiability_examples() {
        let m = ModelSpec::new(SignalFamily::Linear(vec![BasisFn::Constant]), NoiseFamily::Scaled(Profile::constant(1.0)))
            .unwrap();
        let g = TimeGrid::uniform(40, 0.25).unwrap();
        let e = IncrementEngine::new(&m, &g).unwrap();
        let a = e.moments(&Theta::new(vec![1.0], vec![2.0])).unwrap();
        let b = e.moments(&Theta::new(vec![0.4], vec![1.5])).unwrap();
        assert_eq!(identifiability(&a, &a, &g).unwrap(), (0.0, 0.0));
        let (mp, mq) = identifiability(&a, &b, &g).unwrap();
        assert!((mp - 0.36).abs() < 1e-14);
        assert!((mq - 0.25).abs() < 1e-14);

        let m = drift_only(vec![BasisFn::Constant, BasisFn::Cos { freq: 1.0 }]);
        let g = TimeGrid::uniform(100 * 512, 1.0 / 512.0).unwrap();
        let e = IncrementEngine::new(&m, &g).unwrap();
        let a = e.moments(&Theta::new(vec![0.5, 1.0], vec![])).unwrap();
        let b = e.moments(&Theta::new(vec![0.5, 1.3], vec![])).unwrap();
        let (mp, _) = identifiability(&a, &b, &g).unwrap();
        assert!((mp - 0.09 / 2.0).abs() < 1e-5);
    }

    #[test]
    fn limit_examples() {
        let m = ModelSpec::new(SignalFamily::Linear(vec![BasisFn::Cos { freq: 1.0 }]), NoiseFamily::Scaled(Profile::constant(1.0)))
            .unwrap();
        let b = periodic_limit_fisher(&m, &Theta::new(vec![1.0], vec![2.0]), 1.0, &LimitRegime::HToZero).unwrap();
        assert!((b.jp[(0, 0)] - 0.25).abs() < 1e-12);
        assert!((b.jq[(0, 0)] - 0.125).abs() < 1e-12);
        let m = drift_only(vec![BasisFn::Constant]);
        let b = periodic_limit_fisher(
            &m,
            &Theta::new(vec![1.0], vec![]),
            1.0,
            &LimitRegime::Pattern { offsets: vec![0.5, 1.0] },
        )
        .unwrap();
        assert!((b.jp[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aperiodic_family_is_rejected() {
        let m = drift_only(vec![BasisFn::Cos { freq: 0.3 }]);
        assert!(matches!(
            periodic_limit_fisher(&m, &Theta::new(vec![1.0], vec![]), 1.0, &LimitRegime::HToZero),
            Err(Error::Periodicity { .. })
        ));
    }

    #[test]
    fn normaliser_shrinks_with_n() {
        let m = drift_only(vec![BasisFn::Constant, BasisFn::Sin { freq: 1.0 }]);
        let mut last = f64::INFINITY;
        for n in [100, 1000, 10_000] {
            let g = TimeGrid::uniform(n, 0.05).unwrap();
            let mo = IncrementEngine::new(&m, &g).unwrap().moments(&Theta::new(vec![1.0, 1.0], vec![])).unwrap();
            let norm = empirical_fisher(&mo, &g).unwrap().big_phi.norm();
            assert!(norm < last);
            last = norm;
        }
    }

    #[test]
    fn transfer_matrix_is_n_independent_for_limits() {
        let m = ModelSpec::new(
            SignalFamily::Linear(vec![BasisFn::Constant, BasisFn::Cos { freq: 1.0 }]),
            NoiseFamily::Scaled(Profile::constant(1.0).with_term(0.5, BasisFn::Cos { freq: 1.0 })),
        )
        .unwrap();
        let a = periodic_limit_fisher(&m, &Theta::new(vec![1.0, 0.5], vec![1.0]), 1.0, &LimitRegime::HToZero).unwrap();
        let b = periodic_limit_fisher(&m, &Theta::new(vec![1.0, 0.5], vec![2.0]), 1.0, &LimitRegime::HToZero).unwrap();
        let mut first: Option<DMatrix<f64>> = None;
        for n in [100, 1000, 10_000] {
            let g = TimeGrid::uniform(n, 0.01).unwrap();
            let t = transfer_matrix(&a.for_grid(&g).unwrap(), &b.for_grid(&g).unwrap()).unwrap();
            if let Some(f) = &first {
                assert!(close(&t, f, 1e-12));
            } else {
                first = Some(t);
            }
        }
        let expected = block_diag(
            &(spd_sqrt(&a.jp, EIG_FLOOR, "Jp").unwrap() * spd_inverse_sqrt(&b.jp, EIG_FLOOR, "Jp").unwrap()),
            &(spd_sqrt(&a.jq, EIG_FLOOR, "Jq").unwrap() * spd_inverse_sqrt(&b.jq, EIG_FLOOR, "Jq").unwrap()),
        );
        assert!(close(first.as_ref().unwrap(), &expected, 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pattern_sums_equal_one_period(o1 in 0.05f64..0.45, o2 in 0.5f64..0.95, cycles in 1usize..200, beta in 0.5f64..2.0) {
            let m = ModelSpec::new(
                SignalFamily::Linear(vec![BasisFn::Constant, BasisFn::Cos { freq: 1.0 }, BasisFn::Sin { freq: 2.0 }]),
                NoiseFamily::Scaled(Profile::constant(1.0).with_term(0.5, BasisFn::Cos { freq: 1.0 })),
            ).unwrap();
            let th = Theta::new(vec![1.0, 0.5, -0.2], vec![beta]);
            let offsets = vec![o1, o2, 1.0];
            let lim = periodic_limit_fisher(&m, &th, 1.0, &LimitRegime::Pattern { offsets: offsets.clone() }).unwrap();
            let g = TimeGrid::periodic_pattern(&offsets, 1.0, cycles).unwrap();
            let emp = empirical_fisher(&IncrementEngine::new(&m, &g).unwrap().moments(&th).unwrap(), &g).unwrap();
            prop_assert!(close(&emp.jp, &lim.jp, 1e-12));
            prop_assert!(close(&emp.jq, &lim.jq, 1e-12));
        }
    }
}
