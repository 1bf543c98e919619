//! Deterministic observation grids `0 = t₀ < t₁ < … < t_n = T_n`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::compensated_prefix_sums;

/// Observation instants with their delays stored explicitly, so interval
/// lengths stay exact even when `t_i` is large.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct TimeGrid {
    instants: Vec<f64>,
    delays: Vec<f64>,
    total_time: f64,
    max_delay: f64,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    instants: Vec<f64>,
    delays: Vec<f64>,
}

impl TryFrom<GridRepr> for TimeGrid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        TimeGrid::from_parts(r.instants, r.delays)
    }
}

impl From<TimeGrid> for GridRepr {
    fn from(g: TimeGrid) -> Self {
        GridRepr {
            instants: g.instants,
            delays: g.delays,
        }
    }
}

impl TimeGrid {
    fn from_parts(instants: Vec<f64>, delays: Vec<f64>) -> Result<Self> {
        if instants.len() < 2 || delays.len() + 1 != instants.len() {
            return Err(Error::Grid(format!(
                "need n >= 1 intervals with n + 1 instants (got {} instants, {} delays)",
                instants.len(),
                delays.len()
            )));
        }
        if instants[0] != 0.0 {
            return Err(Error::Grid(format!("first instant is {}, expected 0", instants[0])));
        }
        for (i, w) in instants.windows(2).enumerate() {
            if !(w[0] < w[1]) || !w[1].is_finite() {
                return Err(Error::Grid(format!(
                    "instants not strictly increasing at index {}: {} then {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        if let Some(i) = delays.iter().position(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Grid(format!("delay {} at interval {} is not positive", delays[i], i + 1)));
        }
        let max_delay = delays.iter().cloned().fold(0.0, f64::max);
        let total_time = *instants.last().unwrap();
        Ok(Self {
            instants,
            delays,
            total_time,
            max_delay,
        })
    }

    /// `t_i = i·h`, all delays exactly `h`.
    pub fn uniform(n: usize, h: f64) -> Result<Self> {
        if n == 0 || !(h > 0.0 && h.is_finite()) {
            return Err(Error::Grid(format!("uniform grid needs n >= 1 and h > 0 (n = {n}, h = {h})")));
        }
        let instants = (0..=n).map(|i| i as f64 * h).collect();
        Self::from_parts(instants, vec![h; n])
    }

    /// `t_{jν+k} = offsets[k] + jP` over `cycles` periods; the last offset
    /// must equal `P`.
    pub fn periodic_pattern(offsets: &[f64], period: f64, cycles: usize) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Grid(format!("period {period} must be positive")));
        }
        if offsets.is_empty() || cycles == 0 {
            return Err(Error::Grid("pattern needs at least one offset and one cycle".into()));
        }
        if *offsets.last().unwrap() != period {
            return Err(Error::Grid(format!(
                "last offset {} must equal the period {period}",
                offsets.last().unwrap()
            )));
        }
        if !(offsets[0] > 0.0) || offsets.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Grid("offsets must be strictly increasing within (0, P]".into()));
        }
        let nu = offsets.len();
        let mut pattern_delays = Vec::with_capacity(nu);
        let mut prev = 0.0;
        for &o in offsets {
            pattern_delays.push(o - prev);
            prev = o;
        }
        let mut instants = Vec::with_capacity(nu * cycles + 1);
        instants.push(0.0);
        for j in 0..cycles {
            let base = j as f64 * period;
            for (k, &o) in offsets.iter().enumerate() {
                // the cycle end is computed as (j+1)P so that ν = 1 is a uniform grid
                instants.push(if k + 1 == nu { (j + 1) as f64 * period } else { base + o });
            }
        }
        let delays = (0..cycles).flat_map(|_| pattern_delays.iter().copied()).collect();
        Self::from_parts(instants, delays)
    }

    /// `t_i = inverse_cdf(i/n)`.
    pub fn quantile(inverse_cdf: impl Fn(f64) -> f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Grid("quantile grid needs n >= 1".into()));
        }
        let instants: Vec<f64> = (0..=n).map(|i| inverse_cdf(i as f64 / n as f64)).collect();
        if instants[0] != 0.0 {
            return Err(Error::Grid(format!("inverse cdf at 0 is {}, expected 0", instants[0])));
        }
        Self::from_instants(instants)
    }

    /// Grid from raw instants; delays are the successive differences.
    pub fn from_instants(instants: Vec<f64>) -> Result<Self> {
        let delays = instants.windows(2).map(|w| w[1] - w[0]).collect();
        Self::from_parts(instants, delays)
    }

    /// Grid from delays; instants are rebuilt with compensated summation.
    pub fn from_delays(delays: Vec<f64>) -> Result<Self> {
        let mut instants = vec![0.0];
        instants.extend(compensated_prefix_sums(&delays));
        Self::from_parts(instants, delays)
    }

    pub fn n(&self) -> usize {
        self.delays.len()
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    /// Interval `i` (0-based) as `(t_{i}, t_{i+1} - t_i)`.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.instants[i], self.delays[i])
    }

    /// SHA-256 of the little-endian bytes of the instants, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.instants {
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Single-column CSV with header `t`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["t"])?;
        for t in &self.instants {
            wr.write_record([format!("{t:?}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut instants = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let field = rec.get(0).unwrap_or("");
            let t: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Grid(format!("row {}: cannot parse instant '{field}'", line + 1)))?;
            instants.push(t);
        }
        Self::from_instants(instants)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_examples() {
        let g = TimeGrid::uniform(4, 0.5).unwrap();
        assert_eq!(g.instants(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.total_time(), 2.0);
        assert_eq!(g.max_delay(), 0.5);
        assert_eq!(TimeGrid::uniform(1, 1.0).unwrap().instants(), &[0.0, 1.0]);
        let g = TimeGrid::uniform(1000, 0.01).unwrap();
        assert!((g.total_time() - 10.0).abs() < 1e-12);
        assert!(g.delays().iter().all(|&d| d == 0.01));
    }

    #[test]
    fn pattern_examples() {
        let g = TimeGrid::periodic_pattern(&[0.3, 1.0], 1.0, 2).unwrap();
        assert_eq!(g.instants(), &[0.0, 0.3, 1.0, 1.3, 2.0]);
        assert_eq!(g.n(), 4);
        let g = TimeGrid::periodic_pattern(&[0.1, 0.5, 1.0], 1.0, 100).unwrap();
        assert_eq!(g.n(), 300);
        assert_eq!(g.total_time(), 100.0);
        assert_eq!(g.max_delay(), 0.5);
        assert!(TimeGrid::periodic_pattern(&[0.5, 0.9], 1.0, 2).is_err());
        assert!(TimeGrid::periodic_pattern(&[0.5, 0.4, 1.0], 1.0, 2).is_err());
    }

    #[test]
    fn single_offset_pattern_is_uniform() {
        for (p, c) in [(1.0, 3), (0.1, 1000), (0.37, 77)] {
            assert_eq!(
                TimeGrid::periodic_pattern(&[p], p, c).unwrap(),
                TimeGrid::uniform(c, p).unwrap()
            );
        }
    }

    #[test]
    fn quantile_examples() {
        let g = TimeGrid::quantile(|u| u, 4).unwrap();
        assert_eq!(g.instants(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = TimeGrid::quantile(|u| u * u, 2).unwrap();
        assert_eq!(g.instants(), &[0.0, 0.25, 1.0]);
        let g = TimeGrid::quantile(|u| u * u, 100).unwrap();
        assert!(g.delays().windows(2).all(|w| w[0] < w[1]));
        assert!((g.max_delay() - 0.0199).abs() < 1e-12);
        assert!(TimeGrid::quantile(|u| (u - 0.5).abs() - 0.5, 4).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = TimeGrid::quantile(|u| 3.0 * u.powf(1.5), 17).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = TimeGrid::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.instants(), g.instants());
        assert_eq!(back.digest(), g.digest());
    }

    #[test]
    fn digest_changes_with_instants() {
        let a = TimeGrid::uniform(10, 0.1).unwrap();
        let b = TimeGrid::uniform(10, 0.1000001).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    proptest! {
        #[test]
        fn delays_rebuild_instants(delays in prop::collection::vec(1e-3f64..10.0, 1..400)) {
            let g = TimeGrid::from_delays(delays.clone()).unwrap();
            let again = TimeGrid::from_instants(g.instants().to_vec()).unwrap();
            for (i, (a, b)) in g.instants().iter().zip(again.instants()).enumerate() {
                prop_assert_eq!(a, b, "instant {}", i);
            }
            let mut naive_err = 0.0f64;
            let mut acc = 0.0f64;
            for (k, d) in delays.iter().enumerate() {
                acc += d;
                naive_err = naive_err.max((acc - g.instants()[k + 1]).abs() / g.instants()[k + 1]);
            }
            prop_assert!(naive_err < 1e-12);
            prop_assert_eq!(g.max_delay(), delays.iter().cloned().fold(0.0, f64::max));
        }

        #[test]
        fn grid_invariants(offs in prop::collection::vec(0.01f64..1.0, 1..6), cycles in 1usize..50) {
            let mut o = offs.clone();
            o.sort_by(|a, b| a.partial_cmp(b).unwrap());
            o.dedup();
            let p = o.last().unwrap() + 0.5;
            o.push(p);
            let g = TimeGrid::periodic_pattern(&o, p, cycles).unwrap();
            prop_assert_eq!(g.n(), o.len() * cycles);
            prop_assert!(g.instants().windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(g.total_time(), cycles as f64 * p);
            for j in 0..=cycles {
                prop_assert_eq!(g.instants()[j * o.len()], j as f64 * p);
            }
        }
    }
}
