//! Weighted least squares for linear signals with known or scaled noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{matrix_serde, pairwise_sum};

/// Known-noise fit: `α̂ = (𝐅ᵀG⁻²𝐅)⁻¹𝐅ᵀG⁻²y` with its exact covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub alpha_hat: Vec<f64>,
    #[serde(with = "matrix_serde")]
    pub variance: DMatrix<f64>,
}

/// Scaled-noise fit: the same `α̂` with `β̂ = (1/n) Σ r_i²/s_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledFit {
    pub alpha_hat: Vec<f64>,
    pub beta_hat: f64,
    /// Covariance of `α̂` with `β` replaced by `β̂`.
    #[serde(with = "matrix_serde")]
    pub variance: DMatrix<f64>,
}

const RCOND_FLOOR: f64 = 1e-14;

fn check_shapes(design: &DMatrix<f64>, w: &[f64], y: &[f64]) -> Result<()> {
    if design.nrows() != y.len() || w.len() != y.len() {
        return Err(Error::Shape(format!(
            "design is {}x{}, {} variances, {} increments",
            design.nrows(),
            design.ncols(),
            w.len(),
            y.len()
        )));
    }
    if let Some(i) = w.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain(format!("variance {} at interval {} is not positive", w[i], i + 1)));
    }
    Ok(())
}

// returns α̂ and the inverse Gram matrix
fn weighted_normal_equations(design: &DMatrix<f64>, g2: &[f64], y: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_shapes(design, g2, y)?;
    let (n, p) = design.shape();
    if n < p {
        return Err(Error::SingularDesign);
    }
    let gram = DMatrix::from_fn(p, p, |j, k| {
        pairwise_sum(&(0..n).map(|i| design[(i, j)] * design[(i, k)] / g2[i]).collect::<Vec<_>>())
    });
    let rhs = DVector::from_iterator(
        p,
        (0..p).map(|k| pairwise_sum(&(0..n).map(|i| design[(i, k)] * y[i] / g2[i]).collect::<Vec<_>>())),
    );
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let (mn, mx) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e.abs())));
    if !(mn > RCOND_FLOOR * mx) {
        return Err(Error::SingularDesign);
    }
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    let alpha = chol.solve(&rhs);
    Ok((alpha, chol.inverse()))
}

/// `design` holds `∇_α F_i` row-wise and `g2` the known `G_i²`.
pub fn mle_linear_closed_form(design: &DMatrix<f64>, g2: &[f64], y: &[f64]) -> Result<LinearFit> {
    let (alpha, inv) = weighted_normal_equations(design, g2, y)?;
    Ok(LinearFit {
        alpha_hat: alpha.as_slice().to_vec(),
        variance: inv,
    })
}

/// `base` holds `s_i = ∫σ₀²` so that `G_i² = β s_i`.
pub fn mle_scaled_noise_closed_form(design: &DMatrix<f64>, base: &[f64], y: &[f64]) -> Result<ScaledFit> {
    let (alpha, inv) = weighted_normal_equations(design, base, y)?;
    let fitted = design * &alpha;
    let r2: Vec<f64> = (0..y.len()).map(|i| (y[i] - fitted[i]).powi(2) / base[i]).collect();
    let beta_hat = pairwise_sum(&r2) / y.len() as f64;
    Ok(ScaledFit {
        alpha_hat: alpha.as_slice().to_vec(),
        beta_hat,
        variance: inv * beta_hat,
    })
}
