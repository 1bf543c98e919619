//! Small numerical helpers shared across modules: reproducible summation,
//! symmetric matrix functions and low-discrepancy points.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (tree) summation. The split points depend only on the length, so
/// the result is independent of how the terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Neumaier-compensated running sums, returning every partial sum.
pub fn compensated_prefix_sums(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        out.push(sum + comp);
    }
    out
}

/// Sums the columns of an `n × k` term matrix with pairwise summation.
pub fn pairwise_column_sums(terms: &DMatrix<f64>) -> Vec<f64> {
    (0..terms.ncols())
        .map(|j| pairwise_sum(terms.column(j).as_slice()))
        .collect()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Applies `g` to the eigenvalues of a symmetric positive definite matrix.
/// Fails when the smallest eigenvalue is below `floor`.
fn spd_function(
    m: &DMatrix<f64>,
    floor: f64,
    block: &'static str,
    g: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > floor) {
        return Err(Error::SingularInformation {
            block,
            min_eigenvalue: min,
            floor,
        });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(g));
    Ok(symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

/// `M^{-1/2}` for symmetric positive definite `M`.
pub fn spd_inverse_sqrt(m: &DMatrix<f64>, floor: f64, block: &'static str) -> Result<DMatrix<f64>> {
    spd_function(m, floor, block, |l| 1.0 / l.sqrt())
}

/// `M^{1/2}` for symmetric positive definite `M`.
pub fn spd_sqrt(m: &DMatrix<f64>, floor: f64, block: &'static str) -> Result<DMatrix<f64>> {
    spd_function(m, floor, block, f64::sqrt)
}

/// `M^{-1}` for symmetric positive definite `M`.
pub fn spd_inverse(m: &DMatrix<f64>, floor: f64, block: &'static str) -> Result<DMatrix<f64>> {
    spd_function(m, floor, block, |l| 1.0 / l)
}

/// Block-diagonal matrix `diag[a, b]`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(a);
    out.view_mut((p, p), (q, q)).copy_from(b);
    out
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in the given base.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut acc = 0.0;
    while index > 0 {
        acc += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    acc
}

/// Halton point number `index` (1-based; the first point has 0.5 in base 2)
/// in the unit cube of dimension `dim`.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton dimension {dim} not supported");
    (0..dim).map(|k| radical_inverse(index, PRIMES[k])).collect()
}

/// Row-major matrix dumps with explicit dimensions.
pub mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct RowMajor {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        RowMajor {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = RowMajor::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                r.data.len(),
                r.rows,
                r.cols
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn compensated_prefix_is_accurate() {
        let xs = vec![0.1; 10_000];
        let sums = compensated_prefix_sums(&xs);
        assert!((sums[9_999] - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_whitens() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = spd_inverse_sqrt(&m, 1e-12, "test").unwrap();
        let id = &r * &m * &r;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn singular_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_inverse_sqrt(&m, 1e-12, "Jp"),
            Err(Error::SingularInformation { block: "Jp", .. })
        ));
    }

    #[test]
    fn halton_first_point_is_centre() {
        assert_eq!(halton(1, 3), vec![0.5, 1.0 / 3.0, 0.2]);
    }
}
