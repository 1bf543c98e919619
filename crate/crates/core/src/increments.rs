//! Per-interval moments `F_i(α) = ∫ f(α,t)dt`, `G_i²(β) = ∫ σ²(β,t)dt` and
//! their parameter gradients.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, NoiseFamily, SignalFamily, Theta};
use crate::quadrature::{integrate_vec_pieces, QuadOptions};
use crate::sampling::TimeGrid;

/// Means, variances and gradients of the increments on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementMoments {
    pub f: Vec<f64>,
    pub g2: Vec<f64>,
    /// `n × p`, row `i` is `∇_α F_i`.
    pub grad_f: DMatrix<f64>,
    /// `n × q`, row `i` is `∇_β G_i²`.
    pub grad_g2: DMatrix<f64>,
    /// Relative quadrature tolerance, or 0 when every entry was closed form.
    pub quadrature_tol_used: f64,
}

impl IncrementMoments {
    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn p(&self) -> usize {
        self.grad_f.ncols()
    }

    pub fn q(&self) -> usize {
        self.grad_g2.ncols()
    }
}

/// `ln G_i²` and `∇_β ln G_i²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMoments {
    pub ln_g2: Vec<f64>,
    pub grad_ln_g2: DMatrix<f64>,
}

pub fn log_moments(m: &IncrementMoments) -> LogMoments {
    let ln_g2 = m.g2.iter().map(|g| g.ln()).collect();
    let mut grad_ln_g2 = m.grad_g2.clone();
    for (i, mut row) in grad_ln_g2.row_iter_mut().enumerate() {
        row /= m.g2[i];
    }
    LogMoments { ln_g2, grad_ln_g2 }
}

fn first_error(slot: &mut Option<Error>, r: Result<()>) {
    if let (None, Err(e)) = (&slot, r) {
        *slot = Some(e);
    }
}

fn quad_failure(interval: usize, o: &crate::quadrature::QuadOutcome) -> Error {
    Error::Quadrature {
        interval,
        estimate: o.values.first().copied().unwrap_or(f64::NAN),
        error: o.error,
    }
}

/// `(F, ∇_α F)` on `[start, start + delay]`. `interval` is only used to label
/// errors. Closed forms are used unless `force_quadrature` is set.
pub fn interval_signal_moment(
    model: &ModelSpec,
    alpha: &[f64],
    start: f64,
    delay: f64,
    opts: &QuadOptions,
    force_quadrature: bool,
    interval: usize,
) -> Result<(f64, Vec<f64>)> {
    let p = model.p();
    match &model.signal {
        SignalFamily::Linear(basis) if !force_quadrature => {
            let g: Vec<f64> = basis.iter().map(|b| b.integral(start, delay)).collect();
            let f = g.iter().zip(alpha).map(|(b, a)| a * b).sum();
            Ok((f, g))
        }
        _ => {
            let exact = match (&model.signal, force_quadrature) {
                (SignalFamily::Custom(c), false) => c
                    .antiderivative
                    .as_ref()
                    .map(|a| a(alpha, start + delay) - a(alpha, start)),
                _ => None,
            };
            let mut err = None;
            let mut grad_buf = vec![0.0; p];
            let out = integrate_vec_pieces(
                |t, out| {
                    match model.eval_signal(alpha, t) {
                        Ok(v) => out[0] = v,
                        Err(e) => {
                            first_error(&mut err, Err(e));
                            out[0] = 0.0;
                        }
                    }
                    first_error(&mut err, model.grad_signal_into(alpha, t, &mut grad_buf));
                    out[1..].copy_from_slice(&grad_buf);
                },
                &model.quadrature_points(start, delay),
                1 + p,
                opts,
            )
            .map_err(|o| quad_failure(interval, &o))?;
            if let Some(e) = err {
                return Err(e);
            }
            let f = exact.unwrap_or(out.values[0]);
            if !f.is_finite() {
                return Err(Error::Evaluation {
                    family: model.signal_name(),
                    t: start,
                });
            }
            Ok((f, out.values[1..].to_vec()))
        }
    }
}

/// `(G², ∇_β G²)` on `[start, start + delay]`.
pub fn interval_noise_moment(
    model: &ModelSpec,
    beta: &[f64],
    start: f64,
    delay: f64,
    opts: &QuadOptions,
    force_quadrature: bool,
    interval: usize,
) -> Result<(f64, Vec<f64>)> {
    let q = model.q();
    let (g2, grad) = match (&model.noise, force_quadrature) {
        (NoiseFamily::Known(p), false) => (p.integral(start, delay), Vec::new()),
        (NoiseFamily::Scaled(p), false) => {
            let s = p.integral(start, delay);
            (beta[0] * s, vec![s])
        }
        _ => {
            let exact = match (&model.noise, force_quadrature) {
                (NoiseFamily::Custom(c), false) => c
                    .antiderivative
                    .as_ref()
                    .map(|a| a(beta, start + delay) - a(beta, start)),
                _ => None,
            };
            let mut err = None;
            let mut grad_buf = vec![0.0; q];
            let out = integrate_vec_pieces(
                |t, out| {
                    match model.eval_noise_var(beta, t) {
                        Ok(v) => out[0] = v,
                        Err(e) => {
                            first_error(&mut err, Err(e));
                            out[0] = 0.0;
                        }
                    }
                    first_error(&mut err, model.grad_noise_var_into(beta, t, &mut grad_buf));
                    out[1..].copy_from_slice(&grad_buf);
                },
                &model.quadrature_points(start, delay),
                1 + q,
                opts,
            )
            .map_err(|o| quad_failure(interval, &o))?;
            if let Some(e) = err {
                return Err(e);
            }
            (exact.unwrap_or(out.values[0]), out.values[1..].to_vec())
        }
    };
    if !(g2 >= model.variance_floor * delay) {
        return Err(Error::NoiseFloorViolation {
            value: g2 / delay,
            floor: model.variance_floor,
            t: start,
        });
    }
    Ok((g2, grad))
}

/// Moment evaluator bound to one `(model, grid)` pair. Parameter-free
/// integrals (linear-signal basis integrals, scaled-noise base variances)
/// are computed once.
#[derive(Clone, Debug)]
pub struct IncrementEngine {
    model: ModelSpec,
    grid: TimeGrid,
    opts: QuadOptions,
    force_quadrature: bool,
    design: Option<DMatrix<f64>>,
    noise_base: Option<Vec<f64>>,
}

impl IncrementEngine {
    pub fn new(model: &ModelSpec, grid: &TimeGrid) -> Result<Self> {
        Self::with_options(model, grid, QuadOptions::default(), false)
    }

    pub fn with_options(
        model: &ModelSpec,
        grid: &TimeGrid,
        opts: QuadOptions,
        force_quadrature: bool,
    ) -> Result<Self> {
        let mut engine = Self {
            model: model.clone(),
            grid: grid.clone(),
            opts,
            force_quadrature,
            design: None,
            noise_base: None,
        };
        if let SignalFamily::Linear(basis) = &model.signal {
            let p = basis.len();
            let rows: Vec<Vec<f64>> = (0..grid.n())
                .into_par_iter()
                .map(|i| {
                    let (s, d) = grid.interval(i);
                    if force_quadrature {
                        integrate_vec_pieces(
                            |t, out| {
                                for (o, b) in out.iter_mut().zip(basis) {
                                    *o = b.value(t);
                                }
                            },
                            &model.quadrature_points(s, d),
                            p,
                            &opts,
                        )
                        .map(|o| o.values)
                        .map_err(|o| quad_failure(i + 1, &o))
                    } else {
                        Ok(basis.iter().map(|b| b.integral(s, d)).collect())
                    }
                })
                .collect::<Result<_>>()?;
            engine.design = Some(DMatrix::from_fn(grid.n(), p, |i, k| rows[i][k]));
        }
        if let NoiseFamily::Known(prof) | NoiseFamily::Scaled(prof) = &model.noise {
            let base: Vec<f64> = (0..grid.n())
                .into_par_iter()
                .map(|i| {
                    let (s, d) = grid.interval(i);
                    if force_quadrature {
                        integrate_vec_pieces(|t, out| out[0] = prof.value(t), &model.quadrature_points(s, d), 1, &opts)
                            .map(|o| o.values[0])
                            .map_err(|o| quad_failure(i + 1, &o))
                    } else {
                        Ok(prof.integral(s, d))
                    }
                })
                .collect::<Result<_>>()?;
            engine.noise_base = Some(base);
        }
        Ok(engine)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn options(&self) -> &QuadOptions {
        &self.opts
    }

    /// `n × p` matrix of basis integrals for a linear signal.
    pub fn design(&self) -> Option<&DMatrix<f64>> {
        self.design.as_ref()
    }

    /// `∫ σ₀²` per interval for known or scaled noise.
    pub fn noise_base(&self) -> Option<&[f64]> {
        self.noise_base.as_deref()
    }

    fn uses_quadrature(&self) -> bool {
        self.force_quadrature
            || !matches!(
                (&self.model.signal, &self.model.noise),
                (SignalFamily::Linear(_), NoiseFamily::Known(_) | NoiseFamily::Scaled(_))
            )
    }

    /// `(F, ∇_α F)` for every interval.
    pub fn signal_moments(&self, alpha: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if alpha.len() != self.model.p() {
            return Err(Error::Shape(format!("alpha has length {}, expected {}", alpha.len(), self.model.p())));
        }
        if let Some(b) = &self.design {
            let f = (b * nalgebra::DVector::from_column_slice(alpha)).as_slice().to_vec();
            return Ok((f, b.clone()));
        }
        let rows: Vec<(f64, Vec<f64>)> = (0..self.grid.n())
            .into_par_iter()
            .map(|i| {
                let (s, d) = self.grid.interval(i);
                interval_signal_moment(&self.model, alpha, s, d, &self.opts, self.force_quadrature, i + 1)
            })
            .collect::<Result<_>>()?;
        let p = self.model.p();
        let grad = DMatrix::from_fn(rows.len(), p, |i, k| rows[i].1[k]);
        Ok((rows.into_iter().map(|r| r.0).collect(), grad))
    }

    /// `(G², ∇_β G²)` for every interval.
    pub fn noise_moments(&self, beta: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if beta.len() != self.model.q() {
            return Err(Error::Shape(format!("beta has length {}, expected {}", beta.len(), self.model.q())));
        }
        let n = self.grid.n();
        let (g2, grad) = match (&self.noise_base, &self.model.noise) {
            (Some(base), NoiseFamily::Known(_)) => (base.clone(), DMatrix::zeros(n, 0)),
            (Some(base), _) => (
                base.iter().map(|s| beta[0] * s).collect(),
                DMatrix::from_column_slice(n, 1, base),
            ),
            (None, _) => {
                let rows: Vec<(f64, Vec<f64>)> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let (s, d) = self.grid.interval(i);
                        interval_noise_moment(&self.model, beta, s, d, &self.opts, self.force_quadrature, i + 1)
                    })
                    .collect::<Result<_>>()?;
                let q = self.model.q();
                let grad = DMatrix::from_fn(n, q, |i, k| rows[i].1[k]);
                return Ok((rows.into_iter().map(|r| r.0).collect(), grad));
            }
        };
        for (i, (&g, &d)) in g2.iter().zip(self.grid.delays()).enumerate() {
            if !(g >= self.model.variance_floor * d) {
                return Err(Error::NoiseFloorViolation {
                    value: g / d,
                    floor: self.model.variance_floor,
                    t: self.grid.instants()[i],
                });
            }
        }
        Ok((g2, grad))
    }

    pub fn moments(&self, theta: &Theta) -> Result<IncrementMoments> {
        let (f, grad_f) = self.signal_moments(&theta.alpha)?;
        let (g2, grad_g2) = self.noise_moments(&theta.beta)?;
        Ok(IncrementMoments {
            f,
            g2,
            grad_f,
            grad_g2,
            quadrature_tol_used: if self.uses_quadrature() { self.opts.rel_tol } else { 0.0 },
        })
    }
}

/// One-shot moments for `(model, θ, grid)`.
pub fn increment_moments(model: &ModelSpec, theta: &Theta, grid: &TimeGrid) -> Result<IncrementMoments> {
    IncrementEngine::new(model, grid)?.moments(theta)
}
