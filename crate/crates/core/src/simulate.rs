//! Exact draws of the increments `Y_i ~ N(F_i(α), G_i²(β))`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::{IncrementEngine, IncrementMoments};
use crate::model::{ModelSpec, Theta};
use crate::rng::NormalStream;
use crate::sampling::TimeGrid;

/// One realisation of the increments with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementSample {
    pub y: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub replicate: u64,
    pub grid_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Theta>,
}

impl IncrementSample {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Observed data with no known seed or parameter.
    pub fn observed(y: Vec<f64>, grid: &TimeGrid) -> Result<Self> {
        if y.len() != grid.n() {
            return Err(Error::Shape(format!("{} increments for a grid with n = {}", y.len(), grid.n())));
        }
        Ok(Self {
            y,
            seed: 0,
            replicate: 0,
            grid_digest: grid.digest(),
            theta_true: None,
        })
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.y.len() != grid.n() {
            return Err(Error::Shape(format!(
                "sample has {} increments, grid has n = {}",
                self.y.len(),
                grid.n()
            )));
        }
        Ok(())
    }

    /// CSV with columns `i, t_prev, t, y` (1-based `i`).
    pub fn write_csv<W: Write>(&self, grid: &TimeGrid, w: W) -> Result<()> {
        self.check_grid(grid)?;
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["i", "t_prev", "t", "y"])?;
        for (i, y) in self.y.iter().enumerate() {
            let t = grid.instants();
            wr.write_record([
                (i + 1).to_string(),
                format!("{:?}", t[i]),
                format!("{:?}", t[i + 1]),
                format!("{y:?}"),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of [`write_csv`](Self::write_csv); the grid is
    /// rebuilt from the time columns.
    pub fn read_csv<R: Read>(r: R) -> Result<(Self, TimeGrid)> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Invalid(format!("sample csv is missing column '{name}'")))
        };
        let (ci, cp, ct, cy) = (col("i")?, col("t_prev")?, col("t")?, col("y")?);
        let mut instants = vec![0.0];
        let mut y = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |c: usize, name: &str| -> Result<f64> {
                let s = rec.get(c).unwrap_or("").trim();
                s.parse()
                    .map_err(|_| Error::Invalid(format!("sample csv row {}: bad {name} '{s}'", row + 1)))
            };
            if num(ci, "i")? as usize != row + 1 {
                return Err(Error::Invalid(format!("sample csv row {}: index out of order", row + 1)));
            }
            let tp = num(cp, "t_prev")?;
            if tp != *instants.last().unwrap() {
                return Err(Error::Grid(format!("sample csv row {}: t_prev does not continue the grid", row + 1)));
            }
            instants.push(num(ct, "t")?);
            y.push(num(cy, "y")?);
        }
        let grid = TimeGrid::from_instants(instants)?;
        let sample = Self::observed(y, &grid)?;
        Ok((sample, grid))
    }
}

/// `Y_i = F_i + G_i·Z_i` with `Z_i` draw `i` of stream `(seed, replicate)`.
pub fn draw_from_moments(moments: &IncrementMoments, seed: u64, replicate: u64) -> Vec<f64> {
    let mut stream = NormalStream::new(seed, replicate);
    moments
        .f
        .iter()
        .zip(&moments.g2)
        .map(|(f, g2)| f + g2.sqrt() * stream.next_normal())
        .collect()
}

/// Replicate `replicate` of the synthetic experiment keyed by `seed`.
pub fn simulate_replicate(engine: &IncrementEngine, theta: &Theta, seed: u64, replicate: u64) -> Result<IncrementSample> {
    let m = engine.moments(theta)?;
    Ok(IncrementSample {
        y: draw_from_moments(&m, seed, replicate),
        seed,
        replicate,
        grid_digest: engine.grid().digest(),
        theta_true: Some(theta.clone()),
    })
}

pub fn simulate_increments(model: &ModelSpec, theta: &Theta, grid: &TimeGrid, seed: u64) -> Result<IncrementSample> {
    simulate_replicate(&IncrementEngine::new(model, grid)?, theta, seed, 0)
}
