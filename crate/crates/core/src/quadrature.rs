//! Adaptive Gauss–Kronrod (G10/K21) integration of vector-valued integrands,
//! plus Gauss–Legendre and Gauss–Hermite node generation.
//!
//! All components of a vector integrand share the same subdivision, which
//! is what lets a moment and its parameter gradient come out of a single
//! pass. The subdivision rule only depends on the integrand values, so a
//! given integrand always yields bit-identical results.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5, 7, 9.
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Tolerances for adaptive integration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_subdivisions: 1 << 12,
        }
    }
}

/// Result of an adaptive integration.
#[derive(Clone, Debug)]
pub struct QuadOutcome {
    pub values: Vec<f64>,
    /// Largest per-component error estimate.
    pub error: f64,
    pub subdivisions: usize,
}

struct Segment {
    a: f64,
    b: f64,
    est: Vec<f64>,
    err: Vec<f64>,
    // error already at the floating-point floor; bisecting cannot help
    exhausted: bool,
}

fn kronrod_segment<F: FnMut(f64, &mut [f64])>(
    f: &mut F,
    a: f64,
    b: f64,
    dim: usize,
    buf: &mut [f64],
) -> Segment {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut resabs = vec![0.0; dim];
    let mut centre_vals = vec![0.0; dim];
    f(centre, &mut centre_vals);
    for k in 0..dim {
        kron[k] = WGK[10] * centre_vals[k];
        resabs[k] = (WGK[10] * centre_vals[k]).abs();
    }
    // samples are kept for the resasc term
    let mut samples = vec![0.0; dim * 20];
    for j in 0..10 {
        let dx = half * XGK[j];
        f(centre - dx, buf);
        samples[(2 * j) * dim..(2 * j + 1) * dim].copy_from_slice(buf);
        f(centre + dx, buf);
        samples[(2 * j + 1) * dim..(2 * j + 2) * dim].copy_from_slice(buf);
    }
    for j in 0..10 {
        for k in 0..dim {
            let lo = samples[(2 * j) * dim + k];
            let hi = samples[(2 * j + 1) * dim + k];
            kron[k] += WGK[j] * (lo + hi);
            resabs[k] += WGK[j] * (lo.abs() + hi.abs());
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * (lo + hi);
            }
        }
    }
    let mut est = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut floor_hit = true;
    for k in 0..dim {
        let mean = 0.5 * kron[k];
        let mut resasc = WGK[10] * (centre_vals[k] - mean).abs();
        for j in 0..10 {
            let lo = samples[(2 * j) * dim + k];
            let hi = samples[(2 * j + 1) * dim + k];
            resasc += WGK[j] * ((lo - mean).abs() + (hi - mean).abs());
        }
        let abs_half = half.abs();
        let raw = ((kron[k] - gauss[k]) * half).abs();
        let resasc = resasc * abs_half;
        let resabs = resabs[k] * abs_half;
        let mut e = raw;
        // the rescaled estimate is never allowed below |K - G| itself, which
        // keeps it honest on integrands with jumps
        if resasc != 0.0 && e != 0.0 {
            e = e.max(resasc * (200.0 * e / resasc).powf(1.5).min(1.0));
        }
        let round_floor = 50.0 * f64::EPSILON * resabs;
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) && round_floor > e {
            e = round_floor;
        }
        if e > round_floor * 1.000_001 && e > 0.0 {
            floor_hit = false;
        }
        est[k] = kron[k] * half;
        err[k] = e;
    }
    if !est.iter().chain(err.iter()).all(|v| v.is_finite()) {
        floor_hit = false;
    }
    Segment {
        a,
        b,
        est,
        err,
        exhausted: floor_hit,
    }
}

/// Integrates the vector-valued `f` over `[a, b]`. `f(t, out)` must fill
/// `out` (length `dim`). On failure the best available estimate is returned
/// in the `Err` variant.
pub fn integrate_vec<F: FnMut(f64, &mut [f64])>(
    mut f: F,
    a: f64,
    b: f64,
    dim: usize,
    opts: &QuadOptions,
) -> std::result::Result<QuadOutcome, QuadOutcome> {
    let mut buf = vec![0.0; dim];
    let mut segments = vec![kronrod_segment(&mut f, a, b, dim, &mut buf)];
    let mut subdivisions = 0usize;
    loop {
        let mut total = vec![0.0; dim];
        let mut live_err = vec![0.0; dim];
        let mut max_err = vec![0.0f64; dim];
        for s in &segments {
            for k in 0..dim {
                total[k] += s.est[k];
                max_err[k] += s.err[k];
                if !s.exhausted {
                    live_err[k] += s.err[k];
                }
            }
        }
        let finite = total.iter().chain(max_err.iter()).all(|v| v.is_finite());
        let tol: Vec<f64> = total
            .iter()
            .map(|v| opts.abs_tol.max(opts.rel_tol * v.abs()))
            .collect();
        let done = finite && (0..dim).all(|k| live_err[k] <= tol[k]);
        let outcome = || QuadOutcome {
            values: total.clone(),
            error: max_err.iter().cloned().fold(0.0, f64::max),
            subdivisions,
        };
        if done {
            return Ok(outcome());
        }
        if !finite || subdivisions >= opts.max_subdivisions {
            return Err(outcome());
        }
        // bisect the live segment with the largest tolerance-relative error
        let mut pick = None;
        let mut worst = -1.0;
        for (i, s) in segments.iter().enumerate() {
            if s.exhausted {
                continue;
            }
            let score = (0..dim)
                .map(|k| s.err[k] / tol[k])
                .fold(0.0f64, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) });
            if score > worst {
                worst = score;
                pick = Some(i);
            }
        }
        let Some(i) = pick else {
            return Ok(outcome());
        };
        let (sa, sb) = (segments[i].a, segments[i].b);
        let mid = 0.5 * (sa + sb);
        if !(mid > sa && mid < sb) {
            segments[i].exhausted = true;
            continue;
        }
        let left = kronrod_segment(&mut f, sa, mid, dim, &mut buf);
        let right = kronrod_segment(&mut f, mid, sb, dim, &mut buf);
        segments[i] = left;
        segments.insert(i + 1, right);
        subdivisions += 1;
    }
}

/// [`integrate_vec`] over consecutive pieces `[points[k], points[k+1]]`.
/// Known discontinuities of the integrand belong in `points`.
pub fn integrate_vec_pieces<F: FnMut(f64, &mut [f64])>(
    mut f: F,
    points: &[f64],
    dim: usize,
    opts: &QuadOptions,
) -> std::result::Result<QuadOutcome, QuadOutcome> {
    let mut total = QuadOutcome {
        values: vec![0.0; dim],
        error: 0.0,
        subdivisions: 0,
    };
    let mut failed = false;
    for w in points.windows(2) {
        let piece = match integrate_vec(&mut f, w[0], w[1], dim, opts) {
            Ok(o) => o,
            Err(o) => {
                failed = true;
                o
            }
        };
        for (t, v) in total.values.iter_mut().zip(&piece.values) {
            *t += v;
        }
        total.error += piece.error;
        total.subdivisions += piece.subdivisions;
    }
    if failed {
        Err(total)
    } else {
        Ok(total)
    }
}

/// Scalar convenience wrapper around [`integrate_vec`]. Returns
/// `(value, error)` or the failed outcome.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    opts: &QuadOptions,
) -> std::result::Result<(f64, f64), QuadOutcome> {
    integrate_vec(|t, out| out[0] = f(t), a, b, 1, opts).map(|o| (o.values[0], o.error))
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    if m == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut jacobi = DMatrix::zeros(m, m);
    for k in 1..m {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut weights = Vec::with_capacity(m);
    for x in nodes.iter_mut() {
        // polish with Newton on P_m
        for _ in 0..3 {
            let (p, dp) = legendre_with_derivative(m, *x);
            *x -= p / dp;
        }
        let (_, dp) = legendre_with_derivative(m, *x);
        weights.push(2.0 / ((1.0 - *x * *x) * dp * dp));
    }
    (nodes, weights)
}

/// Gauss–Hermite nodes and weights for the standard normal density
/// (weights sum to one), ascending.
pub fn gauss_hermite_normal(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut jacobi = DMatrix::zeros(m, m);
    for k in 1..m {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let (v, _) = integrate(|t| 3.0 * t * t, 0.0, 2.0, &QuadOptions::default()).unwrap();
        assert!((v - 8.0).abs() < 1e-14);
    }

    #[test]
    fn oscillatory_integrand() {
        let w = 2.0 * std::f64::consts::PI * 7.3;
        let exact = (w * 3.0).sin() / w;
        let (v, _) = integrate(|t| (w * t).cos(), 0.0, 3.0, &QuadOptions::default()).unwrap();
        assert!((v - exact).abs() < 1e-12 * exact.abs().max(1e-3));
    }

    #[test]
    fn zero_integral_converges() {
        let w = 2.0 * std::f64::consts::PI;
        let (v, _) = integrate(|t| (w * t).cos(), 0.0, 5.0, &QuadOptions::default()).unwrap();
        assert!(v.abs() < 1e-13);
    }

    #[test]
    fn jump_is_localised() {
        let (v, _) = integrate(|t| if t < 0.3 { 1.0 } else { -2.0 }, 0.0, 1.0, &QuadOptions::default())
            .unwrap();
        assert!((v - (0.3 - 1.4)).abs() < 1e-10);
    }

    #[test]
    fn vector_components_share_subdivision() {
        let out = integrate_vec(
            |t, o| {
                o[0] = t.exp();
                o[1] = t * t.exp();
            },
            0.0,
            1.0,
            2,
            &QuadOptions::default(),
        )
        .unwrap();
        assert!((out.values[0] - (1f64.exp() - 1.0)).abs() < 1e-14);
        assert!((out.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn subdivision_limit_reports_failure() {
        let opts = QuadOptions {
            max_subdivisions: 3,
            ..QuadOptions::default()
        };
        assert!(integrate(|t| 1.0 / t.sqrt(), 0.0, 1.0, &opts).is_err());
    }

    #[test]
    fn legendre_nodes_integrate_polynomials() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((s - 2.0 / 23.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite_normal(10);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
    }
}
