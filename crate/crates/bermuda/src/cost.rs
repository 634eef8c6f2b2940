//! Cost accounting in the units of the complexity model: training a size-`k`
//! estimator costs `k^{1+kappa1}` units, evaluating it at one new point costs
//! `k^{kappa2}` units. Measured arithmetic-operation counters are tracked
//! separately so that the unit model can be checked against reality.

/// Accumulated cost of an experiment or a single pricing run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostTally {
    /// Sum over training calls of `k^{1+kappa1}`.
    pub train_units: f64,
    /// Sum over evaluation calls of `k^{kappa2}`.
    pub eval_units: f64,
    /// Measured arithmetic operations spent in training.
    pub train_ops: u64,
    /// Measured arithmetic operations spent in evaluation.
    pub eval_ops: u64,
    /// Number of training calls (for reconciliation).
    pub train_calls: u64,
    /// Number of point evaluations (for reconciliation).
    pub eval_calls: u64,
    pub wall_seconds: f64,
}

impl CostTally {
    pub fn total_units(&self) -> f64 {
        self.train_units + self.eval_units
    }

    pub fn add(&mut self, other: &CostTally) {
        self.train_units += other.train_units;
        self.eval_units += other.eval_units;
        self.train_ops += other.train_ops;
        self.eval_ops += other.eval_ops;
        self.train_calls += other.train_calls;
        self.eval_calls += other.eval_calls;
        self.wall_seconds += other.wall_seconds;
    }
}
