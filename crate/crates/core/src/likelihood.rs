//! Exact Gaussian log-likelihood of the increments, its score, the local
//! log-likelihood ratio with its LAN decomposition and the closed-form
//! power-moment identity of the likelihood ratio.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::{log_moments, IncrementEngine, IncrementMoments};
use crate::information::InformationBundle;
use crate::model::{NoiseFamily, ParameterSpace, Theta};
use crate::numeric::pairwise_sum;
use crate::quadrature::{integrate, QuadOptions};

fn check_len(m: &IncrementMoments, y: &[f64]) -> Result<()> {
    if m.n() != y.len() {
        return Err(Error::Shape(format!("{} increments but moments for n = {}", y.len(), m.n())));
    }
    Ok(())
}

/// `Λ_n(θ) = −n ln(2π)/2 − Σ ln G_i − Σ (Y_i − F_i)²/(2G_i²)`.
pub fn log_likelihood(m: &IncrementMoments, y: &[f64]) -> Result<f64> {
    check_len(m, y)?;
    let terms: Vec<f64> = (0..m.n())
        .map(|i| {
            let r = y[i] - m.f[i];
            0.5 * m.g2[i].ln() + r * r / (2.0 * m.g2[i])
        })
        .collect();
    Ok(-(m.n() as f64) * (2.0 * PI).ln() / 2.0 - pairwise_sum(&terms))
}

/// Score `(∂_α Λ_n, ∂_β Λ_n)` flattened.
pub fn grad_log_likelihood(m: &IncrementMoments, y: &[f64]) -> Result<Vec<f64>> {
    check_len(m, y)?;
    let (p, q) = (m.p(), m.q());
    let mut out = Vec::with_capacity(p + q);
    for k in 0..p {
        let t: Vec<f64> = (0..m.n()).map(|i| (y[i] - m.f[i]) * m.grad_f[(i, k)] / m.g2[i]).collect();
        out.push(pairwise_sum(&t));
    }
    for k in 0..q {
        let t: Vec<f64> = (0..m.n())
            .map(|i| {
                let r = y[i] - m.f[i];
                (-1.0 + r * r / m.g2[i]) * m.grad_g2[(i, k)] / (2.0 * m.g2[i])
            })
            .collect();
        out.push(pairwise_sum(&t));
    }
    Ok(out)
}

/// Local log-likelihood ratio `Λ_n^(θ,w) = Δ_n·w − |w|²/2 + r_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanDecomposition {
    pub log_ratio: f64,
    pub delta_dot_w: f64,
    pub quad_term: f64,
    pub remainder: f64,
    pub delta_vec: Vec<f64>,
}

/// Evaluates LAN quantities at a fixed `θ` for fixed local parameters; the
/// moments at `θ` and at every `θ + wΦ_n` are computed once and reused for
/// every sample.
#[derive(Clone, Debug)]
pub struct LanEvaluator {
    base: IncrementMoments,
    grad_ln_g2: DMatrix<f64>,
    info: InformationBundle,
    shifted: Vec<(Vec<f64>, IncrementMoments)>,
}

impl LanEvaluator {
    pub fn new(
        engine: &IncrementEngine,
        space: &ParameterSpace,
        theta: &Theta,
        info: &InformationBundle,
        w_set: &[Vec<f64>],
    ) -> Result<Self> {
        let d = space.dim();
        let base = engine.moments(theta)?;
        let mut shifted = Vec::with_capacity(w_set.len());
        for w in w_set {
            if w.len() != d {
                return Err(Error::Shape(format!("w has length {}, expected {d}", w.len())));
            }
            let moved = theta.shifted(&info.shift(w));
            if !space.contains(&moved) {
                return Err(Error::OutOfSpace(format!(
                    "theta + w Phi_n = {moved} leaves the parameter box for w = {w:?}"
                )));
            }
            shifted.push((w.clone(), engine.moments(&moved)?));
        }
        let grad_ln_g2 = log_moments(&base).grad_ln_g2;
        Ok(Self {
            base,
            grad_ln_g2,
            info: info.clone(),
            shifted,
        })
    }

    pub fn w_set(&self) -> impl Iterator<Item = &[f64]> {
        self.shifted.iter().map(|(w, _)| w.as_slice())
    }

    /// `Δ_n = Σ_i (∇F_i φ_n W_i/G_i, ∇ln G_i² ψ_n (W_i² − 1)/2)` with
    /// `W_i = (Y_i − F_i)/G_i` at the base point.
    pub fn delta(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(&self.base, y)?;
        let m = &self.base;
        let (p, q) = (m.p(), m.q());
        let mut a_terms = vec![Vec::with_capacity(m.n()); p];
        let mut b_terms = vec![Vec::with_capacity(m.n()); q];
        for i in 0..m.n() {
            let g = m.g2[i].sqrt();
            let w = (y[i] - m.f[i]) / g;
            for (k, col) in a_terms.iter_mut().enumerate() {
                col.push(m.grad_f[(i, k)] * w / g);
            }
            for (k, col) in b_terms.iter_mut().enumerate() {
                col.push(self.grad_ln_g2[(i, k)] * (w * w - 1.0) / 2.0);
            }
        }
        let sa = DVector::from_iterator(p, a_terms.iter().map(|t| pairwise_sum(t)));
        let sb = DVector::from_iterator(q, b_terms.iter().map(|t| pairwise_sum(t)));
        let mut out: Vec<f64> = (self.info.phi_n.transpose() * sa).iter().copied().collect();
        out.extend((self.info.psi_n.transpose() * sb).iter().copied());
        Ok(out)
    }

    /// Decomposition for the `k`-th local parameter.
    pub fn decompose(&self, k: usize, y: &[f64]) -> Result<LanDecomposition> {
        let delta = self.delta(y)?;
        self.decompose_with(k, y, &delta)
    }

    /// Same as [`decompose`](Self::decompose) with a precomputed `Δ_n`.
    pub fn decompose_with(&self, k: usize, y: &[f64], delta: &[f64]) -> Result<LanDecomposition> {
        let (w, moved) = &self.shifted[k];
        let log_ratio = log_likelihood(moved, y)? - log_likelihood(&self.base, y)?;
        let delta_dot_w: f64 = delta.iter().zip(w).map(|(a, b)| a * b).sum();
        let quad_term = 0.5 * w.iter().map(|x| x * x).sum::<f64>();
        Ok(LanDecomposition {
            log_ratio,
            delta_dot_w,
            quad_term,
            remainder: log_ratio - delta_dot_w + quad_term,
            delta_vec: delta.to_vec(),
        })
    }
}

/// `Λ_n(θ + wΦ_n) − Λ_n(θ)` and its LAN decomposition for one sample.
pub fn normalized_ratio(
    engine: &IncrementEngine,
    space: &ParameterSpace,
    theta: &Theta,
    w: &[f64],
    y: &[f64],
    info: &InformationBundle,
) -> Result<LanDecomposition> {
    LanEvaluator::new(engine, space, theta, info, &[w.to_vec()])?.decompose(0, y)
}

/// Closed form of `ln E_θ[exp(z(Λ_n(θ+μ) − Λ_n(θ)))]`:
/// `−Σ ΔF_i² / (2(A_i/(1−z) + B_i/z)) − Σ ∫_{A_i}^{B_i} (B_i − x)/(2x(x/(1−z) + B_i/z)) dx`
/// with `A_i = G_i²(β)`, `B_i = G_i²(β+γ)`, `ΔF_i = F_i(α+δ) − F_i(α)`.
pub fn expected_power_identity(
    engine: &IncrementEngine,
    space: &ParameterSpace,
    theta: &Theta,
    mu: &[f64],
    z: f64,
) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("z = {z} must lie in (0, 1)")));
    }
    if mu.len() != space.dim() {
        return Err(Error::Shape(format!("mu has length {}, expected {}", mu.len(), space.dim())));
    }
    let moved = theta.shifted(mu);
    space.require_open(theta, "theta")?;
    space.require_open(&moved, "theta + mu")?;
    let a = engine.moments(theta)?;
    let b = engine.moments(&moved)?;
    let opts = QuadOptions::default();
    let mut first = Vec::with_capacity(a.n());
    let mut second = Vec::with_capacity(a.n());
    for i in 0..a.n() {
        let (ga, gb) = (a.g2[i], b.g2[i]);
        let df = b.f[i] - a.f[i];
        first.push(df * df / (2.0 * (ga / (1.0 - z) + gb / z)));
        if ga != gb {
            let h = |x: f64| (gb - x) / (2.0 * x * (x / (1.0 - z) + gb / z));
            let (lo, hi, sign) = if ga < gb { (ga, gb, 1.0) } else { (gb, ga, -1.0) };
            let (v, _) = integrate(h, lo, hi, &opts).map_err(|o| Error::Quadrature {
                interval: i + 1,
                estimate: o.values[0],
                error: o.error,
            })?;
            second.push(sign * v);
        }
    }
    Ok(-pairwise_sum(&first) - pairwise_sum(&second))
}

/// Log-likelihood objective in flat parameter coordinates.
pub trait LogLikelihood: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Generic path: moments are recomputed at every point.
pub struct MomentLikelihood<'a> {
    engine: &'a IncrementEngine,
    y: &'a [f64],
}

impl<'a> MomentLikelihood<'a> {
    pub fn new(engine: &'a IncrementEngine, y: &'a [f64]) -> Result<Self> {
        if y.len() != engine.grid().n() {
            return Err(Error::Shape(format!("{} increments on a grid with n = {}", y.len(), engine.grid().n())));
        }
        Ok(Self { engine, y })
    }

    fn moments(&self, x: &[f64]) -> Result<IncrementMoments> {
        self.engine.moments(&Theta::from_flat(x, self.engine.model().p()))
    }
}

impl LogLikelihood for MomentLikelihood<'_> {
    fn dim(&self) -> usize {
        self.engine.model().dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        log_likelihood(&self.moments(x)?, self.y)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = self.moments(x)?;
        Ok((log_likelihood(&m, self.y)?, grad_log_likelihood(&m, self.y)?))
    }
}

/// Sufficient-statistic path for a linear signal with known or scaled
/// noise: `Λ = c − (n/2)ln β − (yy − 2bᵀα + αᵀAα)/(2β)`.
pub struct LinearGaussianLikelihood {
    p: usize,
    scaled: bool,
    n: f64,
    constant: f64,
    yy: f64,
    b: DVector<f64>,
    a: DMatrix<f64>,
    floor: f64,
}

impl LinearGaussianLikelihood {
    /// `None` when the model is not linear with known or scaled noise.
    pub fn new(engine: &IncrementEngine, y: &[f64]) -> Result<Option<Self>> {
        let (Some(design), Some(base)) = (engine.design(), engine.noise_base()) else {
            return Ok(None);
        };
        if y.len() != design.nrows() {
            return Err(Error::Shape(format!("{} increments on a grid with n = {}", y.len(), design.nrows())));
        }
        let scaled = matches!(engine.model().noise, NoiseFamily::Scaled(_));
        let n = y.len();
        let p = design.ncols();
        let yy = pairwise_sum(&(0..n).map(|i| y[i] * y[i] / base[i]).collect::<Vec<_>>());
        let b = DVector::from_iterator(
            p,
            (0..p).map(|k| pairwise_sum(&(0..n).map(|i| y[i] * design[(i, k)] / base[i]).collect::<Vec<_>>())),
        );
        let a = DMatrix::from_fn(p, p, |j, k| {
            pairwise_sum(&(0..n).map(|i| design[(i, j)] * design[(i, k)] / base[i]).collect::<Vec<_>>())
        });
        let ln_base = pairwise_sum(&base.iter().map(|s| s.ln()).collect::<Vec<_>>());
        let floor = engine.model().variance_floor
            * engine
                .grid()
                .delays()
                .iter()
                .zip(base)
                .map(|(d, s)| d / s)
                .fold(0.0, f64::max);
        Ok(Some(Self {
            p,
            scaled,
            n: n as f64,
            constant: -(n as f64) * (2.0 * PI).ln() / 2.0 - 0.5 * ln_base,
            yy,
            b,
            a,
            floor,
        }))
    }

    fn parts(&self, x: &[f64]) -> Result<(f64, DVector<f64>, f64)> {
        let alpha = DVector::from_column_slice(&x[..self.p]);
        let beta = if self.scaled { x[self.p] } else { 1.0 };
        if self.scaled && !(beta >= self.floor && beta > 0.0) {
            return Err(Error::NoiseFloorViolation {
                value: beta,
                floor: self.floor,
                t: 0.0,
            });
        }
        let aa = &self.a * &alpha;
        let quad = self.yy - 2.0 * self.b.dot(&alpha) + alpha.dot(&aa);
        Ok((quad, &self.b - aa, beta))
    }
}

impl LogLikelihood for LinearGaussianLikelihood {
    fn dim(&self) -> usize {
        self.p + usize::from(self.scaled)
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let (quad, _, beta) = self.parts(x)?;
        Ok(self.constant - 0.5 * self.n * beta.ln() - quad / (2.0 * beta))
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (quad, resid, beta) = self.parts(x)?;
        let value = self.constant - 0.5 * self.n * beta.ln() - quad / (2.0 * beta);
        let mut g: Vec<f64> = resid.iter().map(|r| r / beta).collect();
        if self.scaled {
            g.push(-0.5 * self.n / beta + quad / (2.0 * beta * beta));
        }
        Ok((value, g))
    }
}

/// Picks the sufficient-statistic path when allowed and available.
pub fn objective<'a>(engine: &'a IncrementEngine, y: &'a [f64], fast_path: bool) -> Result<Box<dyn LogLikelihood + 'a>> {
    if fast_path {
        if let Some(l) = LinearGaussianLikelihood::new(engine, y)? {
            return Ok(Box::new(l));
        }
    }
    Ok(Box::new(MomentLikelihood::new(engine, y)?))
}
