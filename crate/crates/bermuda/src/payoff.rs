//! Exercise payoffs `g_j(z)` with discounting folded in, so every estimator
//! and pricer works on already-discounted cashflows.

use crate::model::TimeGrid;

/// A discounted exercise payoff, nonnegative by construction.
pub trait Payoff: Send + Sync {
    /// `g_j(z)` for `0 <= j <= J`.
    fn value(&self, j: usize, z: &[f64]) -> f64;

    /// Number of dates including time zero (J + 1).
    fn num_dates(&self) -> usize;
}

/// The Bermudan max-call: `g_j(z) = e^{-r t_j} (max_i z_i - kappa)^+`.
#[derive(Debug, Clone)]
pub struct MaxCallPayoff {
    pub kappa: f64,
    pub r: f64,
    grid: TimeGrid,
}

impl MaxCallPayoff {
    pub fn new(kappa: f64, r: f64, grid: TimeGrid) -> Self {
        assert!(kappa >= 0.0, "strike must be nonnegative");
        MaxCallPayoff { kappa, r, grid }
    }
}

impl Payoff for MaxCallPayoff {
    fn value(&self, j: usize, z: &[f64]) -> f64 {
        assert!(j <= self.grid.last_index(), "date index out of range");
        let best = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (-self.r * self.grid.time(j)).exp() * (best - self.kappa).max(0.0)
    }

    fn num_dates(&self) -> usize {
        self.grid.last_index() + 1
    }
}
