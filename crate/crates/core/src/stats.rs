//! Streaming ensemble statistics.
//!
//! Each cell `(time, observable)` keeps the sample count, the complex sum
//! and the sums of squares of the real and imaginary parts. The standard
//! error is `s / √n` with `s² = (Σx² − (Σx)²/n) / (n − 1)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cell {
    count: u64,
    sum: C64,
    sum_sq_re: f64,
    sum_sq_im: f64,
    // exact zero variance for constant samples
    min: C64,
    max: C64,
}

impl Cell {
    const EMPTY: Cell = Cell {
        count: 0,
        sum: C64::new(0.0, 0.0),
        sum_sq_re: 0.0,
        sum_sq_im: 0.0,
        min: C64::new(f64::INFINITY, f64::INFINITY),
        max: C64::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    fn push(&mut self, x: C64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq_re += x.re * x.re;
        self.sum_sq_im += x.im * x.im;
        self.min = C64::new(self.min.re.min(x.re), self.min.im.min(x.im));
        self.max = C64::new(self.max.re.max(x.re), self.max.im.max(x.im));
    }

    fn merge(&mut self, other: &Cell) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq_re += other.sum_sq_re;
        self.sum_sq_im += other.sum_sq_im;
        self.min = C64::new(self.min.re.min(other.min.re), self.min.im.min(other.min.im));
        self.max = C64::new(self.max.re.max(other.max.re), self.max.im.max(other.max.im));
    }
}

/// Per-cell running sums for a `times × observables` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleAccumulator {
    n_times: usize,
    n_obs: usize,
    cells: Vec<Cell>,
}

/// Mean and standard error of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: C64Serde,
    /// `None` when fewer than two samples are available.
    pub stderr_re: Option<f64>,
    pub stderr_im: Option<f64>,
    pub n: u64,
    /// Set when a negative variance from rounding was clamped to zero.
    pub clamped: bool,
}

/// Complex number with a plain `{re, im}` serialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct C64Serde {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for C64Serde {
    fn from(c: C64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

impl From<C64Serde> for C64 {
    fn from(c: C64Serde) -> Self {
        C64::new(c.re, c.im)
    }
}

impl Estimate {
    pub fn mean(&self) -> C64 {
        self.mean.into()
    }

    pub fn mean_re(&self) -> f64 {
        self.mean.re
    }

    pub fn stderr(&self) -> Option<f64> {
        self.stderr_re
    }

    /// Standard error of the complex mean, `sqrt(se_re² + se_im²)`.
    pub fn stderr_abs(&self) -> Option<f64> {
        Some(self.stderr_re?.hypot(self.stderr_im?))
    }
}

fn stderr_of(count: u64, sum: f64, sum_sq: f64, constant: bool) -> (Option<f64>, bool) {
    if count < 2 {
        return (None, false);
    }
    if constant {
        return (Some(0.0), false);
    }
    let n = count as f64;
    let var = (sum_sq - sum * sum / n) / (n - 1.0);
    if var < 0.0 {
        (Some(0.0), true)
    } else {
        (Some((var / n).sqrt()), false)
    }
}

impl EnsembleAccumulator {
    pub fn new(n_times: usize, n_obs: usize) -> Self {
        Self { n_times, n_obs, cells: vec![Cell::EMPTY; n_times * n_obs] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_times, self.n_obs)
    }

    fn cell_index(&self, time: usize, obs: usize) -> Result<usize> {
        if time >= self.n_times {
            return Err(Error::IndexOutOfRange { index: time, len: self.n_times });
        }
        if obs >= self.n_obs {
            return Err(Error::IndexOutOfRange { index: obs, len: self.n_obs });
        }
        Ok(time * self.n_obs + obs)
    }

    pub fn accumulate(&mut self, time: usize, obs: usize, x: C64) -> Result<()> {
        let i = self.cell_index(time, obs)?;
        self.cells[i].push(x);
        Ok(())
    }

    pub fn accumulate_real(&mut self, time: usize, obs: usize, x: f64) -> Result<()> {
        self.accumulate(time, obs, C64::new(x, 0.0))
    }

    /// Add a full `times × observables` row-major block of samples from one
    /// trajectory.
    pub fn accumulate_all(&mut self, samples: &[C64]) -> Result<()> {
        if samples.len() != self.cells.len() {
            return Err(Error::DimensionMismatch { expected: self.cells.len(), found: samples.len() });
        }
        for (cell, &x) in self.cells.iter_mut().zip(samples) {
            cell.push(x);
        }
        Ok(())
    }

    pub fn count(&self, time: usize, obs: usize) -> Result<u64> {
        Ok(self.cells[self.cell_index(time, obs)?].count)
    }

    pub fn sum(&self, time: usize, obs: usize) -> Result<C64> {
        Ok(self.cells[self.cell_index(time, obs)?].sum)
    }

    /// `(Σ re², Σ im²)`.
    pub fn sum_sq(&self, time: usize, obs: usize) -> Result<(f64, f64)> {
        let c = &self.cells[self.cell_index(time, obs)?];
        Ok((c.sum_sq_re, c.sum_sq_im))
    }

    /// Cell-wise sum of two accumulators of equal shape.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(self.n_times, self.n_obs, other.n_times, other.n_obs));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn merged(mut self, other: &Self) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    pub fn estimate(&self, time: usize, obs: usize) -> Result<Estimate> {
        let c = &self.cells[self.cell_index(time, obs)?];
        let n = c.count;
        let mean = if n == 0 { C64::new(f64::NAN, f64::NAN) } else { c.sum / n as f64 };
        let (se_re, cl_re) = stderr_of(n, c.sum.re, c.sum_sq_re, c.min.re == c.max.re);
        let (se_im, cl_im) = stderr_of(n, c.sum.im, c.sum_sq_im, c.min.im == c.max.im);
        Ok(Estimate { mean: mean.into(), stderr_re: se_re, stderr_im: se_im, n, clamped: cl_re || cl_im })
    }

    /// Estimates indexed `[observable][time]`.
    pub fn finalize(&self) -> Vec<Vec<Estimate>> {
        (0..self.n_obs)
            .map(|o| (0..self.n_times).map(|t| self.estimate(t, o).expect("in range")).collect())
            .collect()
    }
}

/// Run-level metadata carried alongside ensemble estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunMetadata {
    pub model: String,
    pub scheme: String,
    pub base_seed: u64,
    pub n_traj_requested: usize,
    pub n_traj_used: usize,
    pub aborted: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub observables: Vec<String>,
    /// Indexed `[observable][time]`.
    pub estimates: Vec<Vec<Estimate>>,
    pub metadata: RunMetadata,
}

impl EnsembleResult {
    pub fn from_accumulator(
        times: Vec<f64>,
        observables: Vec<String>,
        acc: &EnsembleAccumulator,
        metadata: RunMetadata,
    ) -> Self {
        Self { times, observables, estimates: acc.finalize(), metadata }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.observables.iter().position(|o| o == name)
    }

    pub fn series(&self, name: &str) -> Option<&[Estimate]> {
        self.index_of(name).map(|i| self.estimates[i].as_slice())
    }

    /// Real parts of the means of one observable.
    pub fn means(&self, name: &str) -> Option<Vec<f64>> {
        self.series(name).map(|s| s.iter().map(|e| e.mean.re).collect())
    }
}
