//! Uniform time grid on `[0, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n: usize,
    dt: f64,
}

impl TimeGrid {
    /// Builds a grid with `n` steps. The stored horizon is `dt * n`, so the
    /// identity `dt * N == T` holds exactly.
    pub fn new(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!("step count must be at least 2, got {n}")));
        }
        let dt = horizon / n as f64;
        Ok(Self { horizon: dt * n as f64, n, dt })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps; nodes are `0..=n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(|k| self.node(k))
    }
}
