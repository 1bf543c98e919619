//! Parametric signal and noise-variance families, the parameter box and the
//! numeric checks of the regularity/boundedness assumptions.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open interval `(lo, hi)` for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Axis-aligned bounded open box `Θ = A × B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    alpha_box: Vec<Bound>,
    beta_box: Vec<Bound>,
    /// Interior margin as a fraction of each coordinate's width.
    margin_fraction: f64,
}

pub const DEFAULT_MARGIN_FRACTION: f64 = 1e-9;

impl ParameterSpace {
    pub fn new(alpha_box: Vec<Bound>, beta_box: Vec<Bound>) -> Result<Self> {
        Self::with_margin(alpha_box, beta_box, DEFAULT_MARGIN_FRACTION)
    }

    pub fn with_margin(alpha_box: Vec<Bound>, beta_box: Vec<Bound>, margin_fraction: f64) -> Result<Self> {
        if alpha_box.is_empty() && beta_box.is_empty() {
            return Err(Error::Invalid("parameter space needs p + q > 0".into()));
        }
        for (k, b) in alpha_box.iter().chain(beta_box.iter()).enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
                return Err(Error::Invalid(format!(
                    "coordinate {k}: bounds ({}, {}) must be finite with lo < hi",
                    b.lo, b.hi
                )));
            }
        }
        // margin must stay below the half-width of every coordinate
        if !(margin_fraction > 0.0 && margin_fraction < 0.5) {
            return Err(Error::Invalid(format!(
                "interior margin fraction {margin_fraction} must lie in (0, 0.5)"
            )));
        }
        Ok(Self {
            alpha_box,
            beta_box,
            margin_fraction,
        })
    }

    pub fn p(&self) -> usize {
        self.alpha_box.len()
    }

    pub fn q(&self) -> usize {
        self.beta_box.len()
    }

    pub fn dim(&self) -> usize {
        self.p() + self.q()
    }

    pub fn alpha_box(&self) -> &[Bound] {
        &self.alpha_box
    }

    pub fn beta_box(&self) -> &[Bound] {
        &self.beta_box
    }

    pub fn margin_fraction(&self) -> f64 {
        self.margin_fraction
    }

    /// All bounds, α coordinates first.
    pub fn bounds(&self) -> impl Iterator<Item = &Bound> {
        self.alpha_box.iter().chain(self.beta_box.iter())
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bounds().map(Bound::width).collect()
    }

    pub fn centre(&self) -> Theta {
        Theta::new(
            self.alpha_box.iter().map(Bound::centre).collect(),
            self.beta_box.iter().map(Bound::centre).collect(),
        )
    }

    /// Lower and upper limits shrunk by the interior margin.
    pub fn interior_limits(&self) -> (Vec<f64>, Vec<f64>) {
        self.bounds()
            .map(|b| {
                let m = self.margin_fraction * b.width();
                (b.lo + m, b.hi - m)
            })
            .unzip()
    }

    fn check_dims(&self, theta: &Theta) -> Result<()> {
        if theta.alpha.len() != self.p() || theta.beta.len() != self.q() {
            return Err(Error::Shape(format!(
                "theta has dimensions ({}, {}), space expects ({}, {})",
                theta.alpha.len(),
                theta.beta.len(),
                self.p(),
                self.q()
            )));
        }
        Ok(())
    }

    /// Strict membership in the open box.
    pub fn contains(&self, theta: &Theta) -> bool {
        self.check_dims(theta).is_ok()
            && theta
                .iter()
                .zip(self.bounds())
                .all(|(x, b)| x > b.lo && x < b.hi)
    }

    /// Membership in the closed box.
    pub fn contains_closure(&self, theta: &Theta) -> bool {
        self.check_dims(theta).is_ok()
            && theta
                .iter()
                .zip(self.bounds())
                .all(|(x, b)| x >= b.lo && x <= b.hi)
    }

    /// Membership in the box shrunk by the interior margin.
    pub fn contains_interior(&self, theta: &Theta) -> bool {
        let (lo, hi) = self.interior_limits();
        self.check_dims(theta).is_ok()
            && theta
                .iter()
                .enumerate()
                .all(|(k, x)| x >= lo[k] && x <= hi[k])
    }

    pub fn require_open(&self, theta: &Theta, what: &str) -> Result<()> {
        self.check_dims(theta)?;
        if !self.contains(theta) {
            return Err(Error::OutOfSpace(format!("{what} {theta} is not inside the open box")));
        }
        Ok(())
    }

    /// Clamps a flat parameter vector into the interior limits.
    pub fn clamp_interior(&self, flat: &mut [f64]) {
        let (lo, hi) = self.interior_limits();
        for (k, x) in flat.iter_mut().enumerate() {
            *x = x.clamp(lo[k], hi[k]);
        }
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }
}

/// Parameter point `θ = (α, β)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Theta {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { alpha, beta }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len() + self.beta.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha.iter().chain(self.beta.iter()).copied()
    }

    /// `(α, β)` concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn from_flat(flat: &[f64], p: usize) -> Self {
        Self {
            alpha: flat[..p].to_vec(),
            beta: flat[p..].to_vec(),
        }
    }

    /// `θ + d` for a flat displacement `d`.
    pub fn shifted(&self, d: &[f64]) -> Self {
        let flat: Vec<f64> = self.iter().zip(d).map(|(x, dx)| x + dx).collect();
        Self::from_flat(&flat, self.alpha.len())
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(alpha={:?}, beta={:?})", self.alpha, self.beta)
    }
}

/// Basis function of time used by linear signals and by noise profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisFn {
    Constant,
    /// `cos(2π·freq·t)`
    Cos { freq: f64 },
    /// `sin(2π·freq·t)`
    Sin { freq: f64 },
    /// Periodic step function: `levels[k]` on `[breaks[k], breaks[k+1])`
    /// modulo `period`, with `breaks[0] = 0`.
    Step {
        period: f64,
        breaks: Vec<f64>,
        levels: Vec<f64>,
    },
}

impl BasisFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            BasisFn::Constant => Ok(()),
            BasisFn::Cos { freq } | BasisFn::Sin { freq } => {
                if freq.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Invalid(format!("basis frequency {freq} is not finite")))
                }
            }
            BasisFn::Step {
                period,
                breaks,
                levels,
            } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(Error::Invalid(format!("step period {period} must be positive")));
                }
                if breaks.is_empty() || breaks.len() != levels.len() {
                    return Err(Error::Invalid(
                        "step needs as many breaks as levels (at least one)".into(),
                    ));
                }
                if breaks[0] != 0.0 {
                    return Err(Error::Invalid("step breaks must start at 0".into()));
                }
                if breaks.windows(2).any(|w| !(w[0] < w[1])) || *breaks.last().unwrap() >= *period {
                    return Err(Error::Invalid(
                        "step breaks must be strictly increasing inside [0, period)".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            BasisFn::Constant => 1.0,
            BasisFn::Cos { freq } => (TAU * freq * t).cos(),
            BasisFn::Sin { freq } => (TAU * freq * t).sin(),
            BasisFn::Step {
                period,
                breaks,
                levels,
            } => {
                let phase = t.rem_euclid(*period);
                let k = breaks.partition_point(|&b| b <= phase).saturating_sub(1);
                levels[k]
            }
        }
    }

    /// Exact `∫_start^{start+delay} b(t) dt`. Trigonometric terms use the
    /// product form so the result keeps full relative accuracy for short
    /// intervals far from the origin.
    pub fn integral(&self, start: f64, delay: f64) -> f64 {
        match self {
            BasisFn::Constant => delay,
            BasisFn::Cos { freq } | BasisFn::Sin { freq } => {
                let w = TAU * freq;
                if w == 0.0 {
                    return if matches!(self, BasisFn::Cos { .. }) { delay } else { 0.0 };
                }
                let mid = start + 0.5 * delay;
                let s = 2.0 * (0.5 * w * delay).sin() / w;
                match self {
                    BasisFn::Cos { .. } => (w * mid).cos() * s,
                    _ => (w * mid).sin() * s,
                }
            }
            BasisFn::Step {
                period,
                breaks,
                levels,
            } => {
                let per_period: f64 = breaks
                    .iter()
                    .enumerate()
                    .map(|(k, b)| {
                        let next = breaks.get(k + 1).copied().unwrap_or(*period);
                        levels[k] * (next - b)
                    })
                    .sum();
                let full = (delay / period).floor();
                let mut rest = delay - full * period;
                let mut acc = full * per_period;
                let mut phase = start.rem_euclid(*period);
                let mut k = breaks.partition_point(|&b| b <= phase).saturating_sub(1);
                while rest > 0.0 {
                    let next = breaks.get(k + 1).copied().unwrap_or(*period);
                    let span = (next - phase).min(rest);
                    acc += levels[k] * span;
                    rest -= span;
                    phase = next;
                    k += 1;
                    if k == breaks.len() {
                        k = 0;
                        phase = 0.0;
                    }
                }
                acc
            }
        }
    }

    /// Jump locations strictly inside `(start, start + delay)`.
    pub fn discontinuities(&self, start: f64, delay: f64, out: &mut Vec<f64>) {
        if let BasisFn::Step { period, breaks, .. } = self {
            let end = start + delay;
            let first = (start / period).floor() as i64;
            let last = (end / period).floor() as i64;
            for j in first..=last {
                for b in breaks {
                    let t = j as f64 * period + b;
                    if t > start && t < end {
                        out.push(t);
                    }
                }
            }
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match self {
            BasisFn::Step { levels, .. } => levels.iter().fold(0.0, |m, l| m.max(l.abs())),
            _ => 1.0,
        }
    }

    /// Whether `period` is a period of this basis function (to `tol`).
    pub fn has_period(&self, period: f64, tol: f64) -> bool {
        match self {
            BasisFn::Constant => true,
            BasisFn::Cos { freq } | BasisFn::Sin { freq } => {
                let cycles = freq * period;
                (cycles - cycles.round()).abs() < tol
            }
            BasisFn::Step { period: own, .. } => {
                let ratio = period / own;
                (ratio - ratio.round()).abs() < tol && ratio.round() >= 1.0
            }
        }
    }
}

/// `offset + Σ coef_k·b_k(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub offset: f64,
    #[serde(default)]
    pub terms: Vec<ProfileTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileTerm {
    pub coef: f64,
    pub basis: BasisFn,
}

impl Profile {
    pub fn constant(offset: f64) -> Self {
        Self {
            offset,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, coef: f64, basis: BasisFn) -> Self {
        self.terms.push(ProfileTerm { coef, basis });
        self
    }

    pub fn value(&self, t: f64) -> f64 {
        self.offset + self.terms.iter().map(|c| c.coef * c.basis.value(t)).sum::<f64>()
    }

    pub fn integral(&self, start: f64, delay: f64) -> f64 {
        self.offset * delay
            + self
                .terms
                .iter()
                .map(|c| c.coef * c.basis.integral(start, delay))
                .sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        self.terms.iter().try_for_each(|c| c.basis.validate())
    }
}

type ScalarFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// User-supplied signal `f(α, t)`.
#[derive(Clone)]
pub struct CustomSignal {
    pub name: String,
    pub p: usize,
    pub value: ScalarFn,
    /// Writes `∇_α f(α, t)` into the output slice.
    pub gradient: VectorFn,
    /// Optional exact antiderivative `t ↦ ∫_0^t f(α, s) ds`.
    pub antiderivative: Option<ScalarFn>,
}

/// User-supplied noise variance `σ²(β, t)`.
#[derive(Clone)]
pub struct CustomNoise {
    pub name: String,
    pub q: usize,
    pub value: ScalarFn,
    pub gradient: VectorFn,
    /// Writes the row-major `q × q` Hessian into the output slice.
    pub hessian: VectorFn,
    pub antiderivative: Option<ScalarFn>,
}

impl fmt::Debug for CustomSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomSignal({}, p={})", self.name, self.p)
    }
}

impl fmt::Debug for CustomNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomNoise({}, q={})", self.name, self.q)
    }
}

#[derive(Clone, Debug)]
pub enum SignalFamily {
    /// `f(α, t) = Σ α_k b_k(t)`
    Linear(Vec<BasisFn>),
    Custom(CustomSignal),
}

#[derive(Clone, Debug)]
pub enum NoiseFamily {
    /// Known variance profile, no noise parameter (q = 0).
    Known(Profile),
    /// `σ²(β, t) = β·σ₀²(t)`, q = 1.
    Scaled(Profile),
    /// `σ²(β, t) = exp(Σ β_k g_k(t))`.
    LogLinear(Vec<BasisFn>),
    Custom(CustomNoise),
}

/// A complete model: signal family, noise family and the variance floor
/// below which the noise is considered degenerate.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub signal: SignalFamily,
    pub noise: NoiseFamily,
    pub variance_floor: f64,
}

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-10;

impl ModelSpec {
    pub fn new(signal: SignalFamily, noise: NoiseFamily) -> Result<Self> {
        let m = Self {
            signal,
            noise,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        };
        m.validate_shape()?;
        Ok(m)
    }

    pub fn with_variance_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::Invalid(format!("variance floor {floor} must be positive")));
        }
        self.variance_floor = floor;
        Ok(self)
    }

    fn validate_shape(&self) -> Result<()> {
        match &self.signal {
            SignalFamily::Linear(basis) => basis.iter().try_for_each(BasisFn::validate)?,
            SignalFamily::Custom(_) => {}
        }
        match &self.noise {
            NoiseFamily::Known(p) | NoiseFamily::Scaled(p) => p.validate()?,
            NoiseFamily::LogLinear(basis) => basis.iter().try_for_each(BasisFn::validate)?,
            NoiseFamily::Custom(_) => {}
        }
        if self.dim() == 0 {
            return Err(Error::Invalid("model needs p + q > 0".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        match &self.signal {
            SignalFamily::Linear(b) => b.len(),
            SignalFamily::Custom(c) => c.p,
        }
    }

    pub fn q(&self) -> usize {
        match &self.noise {
            NoiseFamily::Known(_) => 0,
            NoiseFamily::Scaled(_) => 1,
            NoiseFamily::LogLinear(b) => b.len(),
            NoiseFamily::Custom(c) => c.q,
        }
    }

    pub fn dim(&self) -> usize {
        self.p() + self.q()
    }

    pub fn signal_name(&self) -> String {
        match &self.signal {
            SignalFamily::Linear(_) => "linear signal".into(),
            SignalFamily::Custom(c) => format!("signal '{}'", c.name),
        }
    }

    pub fn noise_name(&self) -> String {
        match &self.noise {
            NoiseFamily::Known(_) => "known noise".into(),
            NoiseFamily::Scaled(_) => "scaled noise".into(),
            NoiseFamily::LogLinear(_) => "log-linear noise".into(),
            NoiseFamily::Custom(c) => format!("noise '{}'", c.name),
        }
    }

    pub fn check_compatible(&self, space: &ParameterSpace) -> Result<()> {
        if space.p() != self.p() || space.q() != self.q() {
            return Err(Error::Shape(format!(
                "model has (p, q) = ({}, {}) but the parameter space has ({}, {})",
                self.p(),
                self.q(),
                space.p(),
                space.q()
            )));
        }
        Ok(())
    }

    fn finite(&self, v: f64, t: f64, signal: bool) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                family: if signal { self.signal_name() } else { self.noise_name() },
                t,
            })
        }
    }

    /// `f(α, t)`.
    pub fn eval_signal(&self, alpha: &[f64], t: f64) -> Result<f64> {
        let v = match &self.signal {
            SignalFamily::Linear(basis) => basis.iter().zip(alpha).map(|(b, a)| a * b.value(t)).sum(),
            SignalFamily::Custom(c) => (c.value)(alpha, t),
        };
        self.finite(v, t, true)
    }

    pub(crate) fn grad_signal_into(&self, alpha: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        match &self.signal {
            SignalFamily::Linear(basis) => {
                for (o, b) in out.iter_mut().zip(basis) {
                    *o = b.value(t);
                }
            }
            SignalFamily::Custom(c) => (c.gradient)(alpha, t, out),
        }
        for &v in out.iter() {
            self.finite(v, t, true)?;
        }
        Ok(())
    }

    /// `∇_α f(α, t)`.
    pub fn grad_signal(&self, alpha: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.p()];
        self.grad_signal_into(alpha, t, &mut out)?;
        Ok(out)
    }

    fn raw_noise_var(&self, beta: &[f64], t: f64) -> f64 {
        match &self.noise {
            NoiseFamily::Known(p) => p.value(t),
            NoiseFamily::Scaled(p) => beta[0] * p.value(t),
            NoiseFamily::LogLinear(basis) => {
                basis.iter().zip(beta).map(|(b, x)| x * b.value(t)).sum::<f64>().exp()
            }
            NoiseFamily::Custom(c) => (c.value)(beta, t),
        }
    }

    /// `σ²(β, t)`; fails below the variance floor.
    pub fn eval_noise_var(&self, beta: &[f64], t: f64) -> Result<f64> {
        let v = self.finite(self.raw_noise_var(beta, t), t, false)?;
        if v < self.variance_floor {
            return Err(Error::NoiseFloorViolation {
                value: v,
                floor: self.variance_floor,
                t,
            });
        }
        Ok(v)
    }

    pub(crate) fn grad_noise_var_into(&self, beta: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        match &self.noise {
            NoiseFamily::Known(_) => {}
            NoiseFamily::Scaled(p) => out[0] = p.value(t),
            NoiseFamily::LogLinear(basis) => {
                let s = self.raw_noise_var(beta, t);
                for (o, b) in out.iter_mut().zip(basis) {
                    *o = s * b.value(t);
                }
            }
            NoiseFamily::Custom(c) => (c.gradient)(beta, t, out),
        }
        for &v in out.iter() {
            self.finite(v, t, false)?;
        }
        Ok(())
    }

    /// `∇_β σ²(β, t)`.
    pub fn grad_noise_var(&self, beta: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.q()];
        self.grad_noise_var_into(beta, t, &mut out)?;
        Ok(out)
    }

    /// `∇²_β σ²(β, t)`, symmetrised.
    pub fn hess_noise_var(&self, beta: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let q = self.q();
        let mut h = DMatrix::zeros(q, q);
        match &self.noise {
            NoiseFamily::Known(_) | NoiseFamily::Scaled(_) => {}
            NoiseFamily::LogLinear(basis) => {
                let s = self.raw_noise_var(beta, t);
                let g: Vec<f64> = basis.iter().map(|b| b.value(t)).collect();
                for j in 0..q {
                    for k in 0..q {
                        h[(j, k)] = s * g[j] * g[k];
                    }
                }
            }
            NoiseFamily::Custom(c) => {
                let mut buf = vec![0.0; q * q];
                (c.hessian)(beta, t, &mut buf);
                h = DMatrix::from_row_slice(q, q, &buf);
                h = (&h + h.transpose()) * 0.5;
            }
        }
        for &v in h.iter() {
            self.finite(v, t, false)?;
        }
        Ok(h)
    }

    /// Sorted integration points for `[start, start + delay]`: the end
    /// points plus every jump of a step basis used by the model.
    pub fn quadrature_points(&self, start: f64, delay: f64) -> Vec<f64> {
        let mut jumps = Vec::new();
        if let SignalFamily::Linear(basis) = &self.signal {
            basis.iter().for_each(|b| b.discontinuities(start, delay, &mut jumps));
        }
        match &self.noise {
            NoiseFamily::Known(p) | NoiseFamily::Scaled(p) => {
                p.terms.iter().for_each(|c| c.basis.discontinuities(start, delay, &mut jumps))
            }
            NoiseFamily::LogLinear(basis) => basis.iter().for_each(|b| b.discontinuities(start, delay, &mut jumps)),
            NoiseFamily::Custom(_) => {}
        }
        jumps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        jumps.dedup();
        let mut pts = Vec::with_capacity(jumps.len() + 2);
        pts.push(start);
        pts.extend(jumps);
        pts.push(start + delay);
        pts
    }

    /// Checks that every component of the model repeats with `period` on a
    /// probe of `[0, period]`, at `θ`.
    pub fn check_periodic(&self, theta: &Theta, period: f64, tol: f64) -> Result<()> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Domain(format!("period {period} must be positive")));
        }
        const PROBES: usize = 64;
        let p = self.p();
        let q = self.q();
        let mut ga = vec![0.0; p];
        let mut gb = vec![0.0; p];
        let mut na = vec![0.0; q];
        let mut nb = vec![0.0; q];
        for j in 0..PROBES {
            let t = period * (j as f64 + 0.37) / PROBES as f64;
            for shift in [1.0, 3.0] {
                let u = t + shift * period;
                let mut dev = (self.eval_signal(&theta.alpha, t)? - self.eval_signal(&theta.alpha, u)?).abs();
                dev = dev.max((self.raw_noise_var(&theta.beta, t) - self.raw_noise_var(&theta.beta, u)).abs());
                self.grad_signal_into(&theta.alpha, t, &mut ga)?;
                self.grad_signal_into(&theta.alpha, u, &mut gb)?;
                self.grad_noise_var_into(&theta.beta, t, &mut na)?;
                self.grad_noise_var_into(&theta.beta, u, &mut nb)?;
                for (x, y) in ga.iter().zip(&gb).chain(na.iter().zip(&nb)) {
                    dev = dev.max((x - y).abs());
                }
                if dev > tol {
                    return Err(Error::Periodicity {
                        period,
                        t,
                        deviation: dev,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Finite probe for the assumption checks: a lattice in each parameter box
/// and a set of time points.
#[derive(Clone, Debug)]
pub struct Probe {
    pub alphas: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// Lattice spacing per coordinate (α first), used for the modulus of
    /// continuity estimates.
    pub spacing: Vec<f64>,
    /// Largest variance still considered bounded.
    pub variance_ceiling: f64,
}

pub const DEFAULT_PROBE_POINTS: usize = 32;
pub const DEFAULT_VARIANCE_CEILING: f64 = 1e8;

fn lattice(bounds: &[Bound], per_axis: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for b in bounds {
        let axis: Vec<f64> = (0..per_axis)
            .map(|k| {
                if per_axis == 1 {
                    b.centre()
                } else {
                    b.lo + b.width() * k as f64 / (per_axis - 1) as f64
                }
            })
            .collect();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out
}

impl Probe {
    /// Closed-box lattice with `per_axis` points per coordinate and `times`.
    pub fn lattice(space: &ParameterSpace, per_axis: usize, times: Vec<f64>) -> Result<Self> {
        if per_axis == 0 || times.is_empty() {
            return Err(Error::Invalid("probe must be non-empty".into()));
        }
        let spacing = space
            .widths()
            .iter()
            .map(|w| if per_axis > 1 { w / (per_axis - 1) as f64 } else { *w })
            .collect();
        Ok(Self {
            alphas: lattice(space.alpha_box(), per_axis),
            betas: lattice(space.beta_box(), per_axis),
            times,
            spacing,
            variance_ceiling: DEFAULT_VARIANCE_CEILING,
        })
    }

    /// Default probe: 32 points per axis and 257 times over `[0, horizon]`.
    pub fn standard(space: &ParameterSpace, horizon: f64) -> Result<Self> {
        let times = (0..=256).map(|k| horizon * k as f64 / 256.0).collect();
        Self::lattice(space, Self::points_for(space), times)
    }

    // keep the lattice below ~10^5 points per box
    fn points_for(space: &ParameterSpace) -> usize {
        let d = space.p().max(space.q()).max(1) as f64;
        (DEFAULT_PROBE_POINTS as f64).min((1e5f64).powf(1.0 / d).floor()).max(2.0) as usize
    }
}

/// Outcome of [`validate_assumptions`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub inf_variance: f64,
    pub sup_variance: f64,
    pub sup_grad_signal: f64,
    pub sup_grad_variance: f64,
    /// `max sup_t |∇_α f(α,t) − ∇_α f(α',t)|` over lattice neighbours.
    pub modulus_grad_signal: f64,
    /// Same for `∇_β σ²`.
    pub modulus_grad_variance: f64,
    pub pass: bool,
    pub failures: Vec<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// lattice neighbours differ in exactly one coordinate by one step; points
// are bucketed by their rounded lattice index so each lookup is O(d)
fn neighbours(points: &[Vec<f64>], spacing: &[f64]) -> Vec<(usize, usize)> {
    let Some(first) = points.first() else { return Vec::new() };
    let d = first.len();
    if spacing.len() < d || spacing.iter().any(|s| !(*s > 0.0)) {
        return Vec::new();
    }
    let origin: Vec<f64> = (0..d)
        .map(|k| points.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let key = |v: &[f64]| -> Vec<i64> { (0..d).map(|k| ((v[k] - origin[k]) / spacing[k]).round() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, v) in points.iter().enumerate() {
        buckets.entry(key(v)).or_default().push(i);
    }
    let is_step = |a: &[f64], b: &[f64], k: usize| {
        (0..d).all(|j| {
            let diff = (a[j] - b[j]).abs();
            if j == k {
                (diff - spacing[j]).abs() <= 1e-9 * spacing[j]
            } else {
                diff <= 1e-12 * (1.0 + spacing[j])
            }
        })
    };
    let mut out = Vec::new();
    for (i, v) in points.iter().enumerate() {
        let base = key(v);
        for k in 0..d {
            let mut up = base.clone();
            up[k] += 1;
            if let Some(cands) = buckets.get(&up) {
                out.extend(cands.iter().filter(|&&j| is_step(v, &points[j], k)).map(|&j| (i.min(j), i.max(j))));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Probes the boundedness and continuity conditions on a finite lattice.
pub fn validate_assumptions(model: &ModelSpec, space: &ParameterSpace, probe: &Probe) -> ValidationReport {
    let mut failures = Vec::new();
    let mut inf_var = f64::INFINITY;
    let mut sup_var: f64 = 0.0;
    let mut sup_gs: f64 = 0.0;
    let mut sup_gv: f64 = 0.0;
    let mut mod_gs: f64 = 0.0;
    let mut mod_gv: f64 = 0.0;
    if let Err(e) = model.check_compatible(space) {
        failures.push(e.to_string());
    }
    let p = model.p();
    let q = model.q();

    let mut signal_grads: Vec<Vec<Vec<f64>>> = Vec::new();
    for alpha in &probe.alphas {
        let mut per_t = Vec::with_capacity(probe.times.len());
        for &t in &probe.times {
            match model.eval_signal(alpha, t).and_then(|_| model.grad_signal(alpha, t)) {
                Ok(g) => {
                    sup_gs = sup_gs.max(norm(&g));
                    per_t.push(g);
                }
                Err(e) => {
                    failures.push(e.to_string());
                    per_t.push(vec![f64::NAN; p]);
                }
            }
        }
        signal_grads.push(per_t);
    }
    let mut noise_grads: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut floor_failures = 0usize;
    for beta in &probe.betas {
        let mut per_t = Vec::with_capacity(probe.times.len());
        for &t in &probe.times {
            let raw = model.raw_noise_var(beta, t);
            if raw.is_finite() {
                inf_var = inf_var.min(raw);
                sup_var = sup_var.max(raw);
            } else {
                failures.push(format!("non-finite noise variance at t = {t}"));
            }
            if raw < model.variance_floor && floor_failures < 3 {
                floor_failures += 1;
                failures.push(format!(
                    "assumption A2: sigma^2 = {raw:e} below floor {:e} at beta = {beta:?}, t = {t}",
                    model.variance_floor
                ));
            }
            match model.grad_noise_var(beta, t).and_then(|g| model.hess_noise_var(beta, t).map(|_| g)) {
                Ok(g) => {
                    sup_gv = sup_gv.max(norm(&g));
                    per_t.push(g);
                }
                Err(e) => {
                    failures.push(e.to_string());
                    per_t.push(vec![f64::NAN; q]);
                }
            }
        }
        noise_grads.push(per_t);
    }
    let (alpha_spacing, beta_spacing) = probe.spacing.split_at(p.min(probe.spacing.len()));
    for (i, j) in neighbours(&probe.alphas, alpha_spacing) {
        for (gi, gj) in signal_grads[i].iter().zip(&signal_grads[j]) {
            let d: Vec<f64> = gi.iter().zip(gj).map(|(a, b)| a - b).collect();
            mod_gs = mod_gs.max(norm(&d));
        }
    }
    for (i, j) in neighbours(&probe.betas, beta_spacing) {
        for (gi, gj) in noise_grads[i].iter().zip(&noise_grads[j]) {
            let d: Vec<f64> = gi.iter().zip(gj).map(|(a, b)| a - b).collect();
            mod_gv = mod_gv.max(norm(&d));
        }
    }
    if sup_var > probe.variance_ceiling {
        failures.push(format!(
            "assumption A2: sup sigma^2 = {sup_var:e} exceeds the probe ceiling {:e}",
            probe.variance_ceiling
        ));
    }
    if !(sup_gs.is_finite() && sup_gv.is_finite()) {
        failures.push("assumption A2: unbounded gradient on the probe".into());
    }
    ValidationReport {
        inf_variance: inf_var,
        sup_variance: sup_var,
        sup_grad_signal: sup_gs,
        sup_grad_variance: sup_gv,
        modulus_grad_signal: mod_gs,
        modulus_grad_variance: mod_gv,
        pass: failures.is_empty(),
        failures,
    }
}
