use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::DeviceProfile;
use crate::error::{Error, Result};
use crate::rng::normal;

/// Iterative program-and-verify: redraw a cell's deviation until it is within
/// `tolerance` or `max_iters` draws were spent, keeping the smallest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WriteVerifyPolicy {
    pub enabled: bool,
    /// Normalized-conductance units.
    pub tolerance: f64,
    pub max_iters: u32,
}

impl Default for WriteVerifyPolicy {
    fn default() -> Self {
        WriteVerifyPolicy {
            enabled: false,
            tolerance: 0.01,
            max_iters: 20,
        }
    }
}

impl WriteVerifyPolicy {
    pub fn enabled(tolerance: f64, max_iters: u32) -> Result<Self> {
        let p = WriteVerifyPolicy {
            enabled: true,
            tolerance,
            max_iters,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 || self.max_iters == 0 {
            return Err(Error::arg(format!(
                "write-verify needs tolerance > 0 and max_iters >= 1, got {} / {}",
                self.tolerance, self.max_iters
            )));
        }
        Ok(())
    }

    /// Frozen deviation for one write of `level` and the number of draws used.
    pub fn draw<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> (f64, u32) {
        let mut best = sigma * normal(rng);
        if !self.enabled {
            return (best, 1);
        }
        let mut used = 1;
        while best.abs() > self.tolerance && used < self.max_iters {
            let d = sigma * normal(rng);
            used += 1;
            if d.abs() < best.abs() {
                best = d;
            }
        }
        (best, used)
    }
}

/// One `rows x cols` array of multi-level cells. Levels and the deviation
/// frozen at write time are kept row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarSubArray {
    rows: usize,
    cols: usize,
    levels: Vec<u8>,
    deviations: Vec<f64>,
    used_cols: usize,
}

impl CrossbarSubArray {
    pub fn new(rows: usize, cols: usize) -> Self {
        CrossbarSubArray {
            rows,
            cols,
            levels: vec![0; rows * cols],
            deviations: vec![0.0; rows * cols],
            used_cols: 0,
        }
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, levels: Vec<u8>, deviations: Vec<f64>, used_cols: usize) -> Result<Self> {
        if levels.len() != rows * cols || deviations.len() != rows * cols || used_cols > cols {
            return Err(Error::Format(format!("subarray dump does not match {rows}x{cols}")));
        }
        Ok(CrossbarSubArray {
            rows,
            cols,
            levels,
            deviations,
            used_cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn used_cols(&self) -> usize {
        self.used_cols
    }

    pub fn free_cols(&self) -> usize {
        self.cols - self.used_cols
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn deviations(&self) -> &[f64] {
        &self.deviations
    }

    pub(crate) fn reserve(&mut self, cols: usize) -> usize {
        let start = self.used_cols;
        self.used_cols += cols;
        start
    }

    pub fn level(&self, row: usize, col: usize) -> u8 {
        self.levels[row * self.cols + col]
    }

    pub fn deviation(&self, row: usize, col: usize) -> f64 {
        self.deviations[row * self.cols + col]
    }

    /// Programs one cell and returns the number of write pulses used.
    pub fn write<R: Rng + ?Sized>(
        &mut self,
        row: usize,
        col: usize,
        level: u8,
        profile: &DeviceProfile,
        policy: &WriteVerifyPolicy,
        rng: &mut R,
    ) -> Result<u32> {
        let sigma = profile.sigma(level as usize)?;
        let (dev, used) = policy.draw(sigma, rng);
        let i = row * self.cols + col;
        self.levels[i] = level;
        self.deviations[i] = dev;
        Ok(used)
    }

    /// Normalized conductance of a cell: nominal level plus frozen deviation,
    /// plus a fresh read sample when `read_rng` is given.
    pub fn read<R: Rng + ?Sized>(&self, row: usize, col: usize, profile: &DeviceProfile, read_rng: Option<&mut R>) -> f64 {
        let i = row * self.cols + col;
        let level = self.levels[i] as usize;
        let mut g = profile.level_value(level) + self.deviations[i];
        if let Some(rng) = read_rng {
            g += profile.sigma_per_level[level] * normal(rng);
        }
        g
    }
}
