//! Local constant (Nadaraya-Watson) regression with the indicator kernel
//! `K(z) = 1(|z| <= 1)`:
//!
//! `C_{k,j}(z) = sum_i zeta_{k,j+1}(Z_{j+1}^(i)) w_ij(z)` with
//! `w_ij(z) = 1(|z - Z_j^(i)| <= delta_k) / sum_l 1(|z - Z_j^(l)| <= delta_k)`,
//!
//! and `C_{k,j}(z) = 0` when no training point falls within the bandwidth.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::estimators::{Continuation, EstimatorProfile};
use crate::model::PathSet;
use crate::payoff::Payoff;

pub struct LocalEstimator {
    k: usize,
    dim: usize,
    num_dates: usize,
    /// `points[j]` holds the date-j training states, trajectory-major.
    points: Vec<Vec<f64>>,
    /// `zeta[j][i] = zeta_{k,j+1}(Z_{j+1}^(i))` for the same trajectory i.
    zeta: Vec<Vec<f64>>,
    bandwidth: f64,
    train_ops: u64,
    eval_ops: AtomicU64,
}

/// The benchmark bandwidth rule `delta_k = c * k^{-1/(d+2)}`.
pub fn bandwidth_rule(c: f64, k: usize, dim: usize) -> f64 {
    c * (k as f64).powf(-1.0 / (dim as f64 + 2.0))
}

impl LocalEstimator {
    /// Train with the rule bandwidth `delta_k = c k^{-1/(d+2)}`.
    pub fn train(training: &PathSet, payoff: &dyn Payoff, bandwidth_const: f64) -> Self {
        let delta = bandwidth_rule(bandwidth_const, training.count(), training.dim());
        Self::train_with_bandwidth(training, payoff, delta)
    }

    pub fn train_with_bandwidth(training: &PathSet, payoff: &dyn Payoff, delta: f64) -> Self {
        assert!(delta > 0.0, "bandwidth must be positive");
        let k = training.count();
        let dim = training.dim();
        let num_dates = training.num_dates();
        let last = num_dates - 1;

        let mut points: Vec<Vec<f64>> = vec![Vec::new(); last];
        let mut zeta: Vec<Vec<f64>> = vec![Vec::new(); last];
        let mut train_ops: u64 = 0;

        for j in (0..last).rev() {
            points[j] = training.date_slice(j).to_vec();
            let succ = training.date_slice(j + 1);
            if j == last - 1 {
                zeta[j] = (0..k)
                    .map(|i| payoff.value(last, &succ[i * dim..(i + 1) * dim]))
                    .collect();
                train_ops += k as u64;
            } else {
                let pts_next = &points[j + 1];
                let zeta_next = &zeta[j + 1];
                zeta[j] = (0..k)
                    .into_par_iter()
                    .map(|i| {
                        let z = &succ[i * dim..(i + 1) * dim];
                        let c = nw_value(z, pts_next, zeta_next, delta, k, dim);
                        payoff.value(j + 1, z).max(c)
                    })
                    .collect();
                train_ops += (k * k) as u64;
            }
        }

        LocalEstimator {
            k,
            dim,
            num_dates,
            points,
            zeta,
            bandwidth: delta,
            train_ops,
            eval_ops: AtomicU64::new(0),
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

fn nw_value(z: &[f64], points: &[f64], zeta: &[f64], delta: f64, k: usize, dim: usize) -> f64 {
    let d2 = delta * delta;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for i in 0..k {
        let p = &points[i * dim..(i + 1) * dim];
        let dist2: f64 = z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 <= d2 {
            hits += 1;
            sum += zeta[i];
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

impl Continuation for LocalEstimator {
    fn value(&self, j: usize, z: &[f64]) -> f64 {
        assert!(j < self.num_dates, "date index out of range");
        if j == self.num_dates - 1 {
            return 0.0;
        }
        self.eval_ops.fetch_add(self.k as u64, Ordering::Relaxed);
        nw_value(z, &self.points[j], &self.zeta[j], self.bandwidth, self.k, self.dim)
    }

    fn training_size(&self) -> usize {
        self.k
    }

    fn num_dates(&self) -> usize {
        self.num_dates
    }

    fn profile(&self) -> EstimatorProfile {
        EstimatorProfile::local()
    }

    fn measured_train_ops(&self) -> u64 {
        self.train_ops
    }

    fn measured_eval_ops(&self) -> u64 {
        self.eval_ops.load(Ordering::Relaxed)
    }
}
