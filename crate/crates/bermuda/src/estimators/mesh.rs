//! Stochastic mesh estimator: continuation values approximated by
//! likelihood-ratio-weighted averages of recursion targets at the training
//! paths' successor points,
//!
//! `C_{k,j}(z) = (1/k) sum_i zeta_{k,j+1}(Z_{j+1}^(i)) w_ij(z)`,
//!
//! with `w_ij(z) = p_j(z, Z_{j+1}^(i)) / ((1/k) sum_l p_j(Z_j^(l), Z_{j+1}^(i)))`.
//! Denominators are precomputed per successor point during training so each
//! evaluation costs a single pass over the k successors.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::cv::ControlVariate;
use crate::estimators::{log_sum_exp, Continuation, EstimatorProfile};
use crate::model::{MarkovModel, PathSet};
use crate::payoff::Payoff;

pub struct MeshEstimator {
    k: usize,
    dim: usize,
    num_dates: usize,
    /// `succ[j]` holds the successor points `Z_{j+1}^(i)`, trajectory-major.
    succ: Vec<Vec<f64>>,
    /// Mesh targets: `zeta_{k,j+1}(Z_{j+1}^(i))` minus the control value at
    /// the successor point when an inner control variate is active, else the
    /// plain `zeta` values.
    resid: Vec<Vec<f64>>,
    /// `log_denom[j][i] = log((1/k) sum_l p_j(Z_j^(l), Z_{j+1}^(i)))`.
    log_denom: Vec<Vec<f64>>,
    control: Option<Arc<dyn ControlVariate>>,
    model: Arc<dyn MarkovModel>,
    train_ops: u64,
    eval_ops: AtomicU64,
    degenerate_weights: AtomicU64,
}

impl MeshEstimator {
    /// Backward training recursion over `j = J-1 .. 0`.
    pub fn train(training: &PathSet, payoff: &dyn Payoff, model: Arc<dyn MarkovModel>) -> Self {
        Self::train_controlled(training, payoff, model, None)
    }

    /// Training with an optional inner control variate: the mesh then
    /// averages the targets `zeta - h` and every continuation estimate is
    /// `h(j, z)` plus the weighted residual average, which leaves the
    /// estimator unbiased (h is a martingale) but shrinks its noise.
    pub fn train_controlled(
        training: &PathSet,
        payoff: &dyn Payoff,
        model: Arc<dyn MarkovModel>,
        control: Option<Arc<dyn ControlVariate>>,
    ) -> Self {
        let k = training.count();
        let dim = training.dim();
        let num_dates = training.num_dates();
        assert!(k >= 1);
        let last = num_dates - 1;

        let mut succ: Vec<Vec<f64>> = vec![Vec::new(); last];
        let mut zeta: Vec<Vec<f64>> = vec![Vec::new(); last];
        let mut resid: Vec<Vec<f64>> = vec![Vec::new(); last];
        // hsucc[j][i] = h(j+1, Z_{j+1}^(i))
        let mut hsucc: Vec<Vec<f64>> = vec![Vec::new(); last];
        let mut log_denom: Vec<Vec<f64>> = vec![Vec::new(); last];
        let mut train_ops: u64 = 0;

        for j in (0..last).rev() {
            succ[j] = training.date_slice(j + 1).to_vec();
            let date_j = training.date_slice(j);

            // denominators: (1/k) sum_l p_j(Z_j^(l), Z_{j+1}^(i)), in log space
            let succ_j = &succ[j];
            log_denom[j] = (0..k)
                .into_par_iter()
                .map(|i| {
                    let y = &succ_j[i * dim..(i + 1) * dim];
                    let logs: Vec<f64> = (0..k)
                        .map(|l| model.log_transition(j, &date_j[l * dim..(l + 1) * dim], y))
                        .collect();
                    log_sum_exp(&logs) - (k as f64).ln()
                })
                .collect();
            train_ops += (k * k) as u64;

            hsucc[j] = match &control {
                Some(h) => (0..k)
                    .into_par_iter()
                    .map(|i| h.value(j + 1, &succ_j[i * dim..(i + 1) * dim]))
                    .collect(),
                None => vec![0.0; k],
            };

            // zeta_{k,j+1} at the successor points
            if j == last - 1 {
                zeta[j] = (0..k)
                    .map(|i| payoff.value(last, &succ_j[i * dim..(i + 1) * dim]))
                    .collect();
                train_ops += k as u64;
            } else {
                let resid_next = &resid[j + 1];
                let denom_next = &log_denom[j + 1];
                let succ_next = &succ[j + 1];
                let h_here = &hsucc[j];
                zeta[j] = (0..k)
                    .into_par_iter()
                    .map(|i| {
                        let z = &succ_j[i * dim..(i + 1) * dim];
                        let c = h_here[i]
                            + mesh_value(
                                model.as_ref(),
                                j + 1,
                                z,
                                succ_next,
                                resid_next,
                                denom_next,
                                k,
                                dim,
                                None,
                            );
                        payoff.value(j + 1, z).max(c)
                    })
                    .collect();
                train_ops += (k * k) as u64;
            }
            resid[j] = zeta[j].iter().zip(&hsucc[j]).map(|(&z, &h)| z - h).collect();
        }

        MeshEstimator {
            k,
            dim,
            num_dates,
            succ,
            resid,
            log_denom,
            control,
            model,
            train_ops,
            eval_ops: AtomicU64::new(0),
            degenerate_weights: AtomicU64::new(0),
        }
    }

    /// Number of zero-denominator weights encountered so far (each treated as 0).
    pub fn degenerate_weights(&self) -> u64 {
        self.degenerate_weights.load(Ordering::Relaxed)
    }
}

/// Shared evaluation kernel; `degenerate` counts zero-denominator weights.
#[allow(clippy::too_many_arguments)]
fn mesh_value(
    model: &dyn MarkovModel,
    j: usize,
    z: &[f64],
    succ: &[f64],
    zeta: &[f64],
    log_denom: &[f64],
    k: usize,
    dim: usize,
    degenerate: Option<&AtomicU64>,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..k {
        if log_denom[i] == f64::NEG_INFINITY {
            if let Some(counter) = degenerate {
                counter.fetch_add(1, Ordering::Relaxed);
            }
            continue;
        }
        let y = &succ[i * dim..(i + 1) * dim];
        let log_num = model.log_transition(j, z, y);
        if log_num == f64::NEG_INFINITY {
            continue;
        }
        acc += zeta[i] * (log_num - log_denom[i]).exp();
    }
    acc / k as f64
}

impl Continuation for MeshEstimator {
    fn value(&self, j: usize, z: &[f64]) -> f64 {
        assert!(j < self.num_dates, "date index out of range");
        if j == self.num_dates - 1 {
            return 0.0;
        }
        self.eval_ops.fetch_add(self.k as u64, Ordering::Relaxed);
        // With an inner control the mesh averages the residual targets and
        // the martingale term h(j, z) restores the level exactly.
        let base = match &self.control {
            Some(h) => h.value(j, z),
            None => 0.0,
        };
        base + mesh_value(
            self.model.as_ref(),
            j,
            z,
            &self.succ[j],
            &self.resid[j],
            &self.log_denom[j],
            self.k,
            self.dim,
            Some(&self.degenerate_weights),
        )
    }

    fn training_size(&self) -> usize {
        self.k
    }

    fn num_dates(&self) -> usize {
        self.num_dates
    }

    fn profile(&self) -> EstimatorProfile {
        EstimatorProfile::mesh()
    }

    fn measured_train_ops(&self) -> u64 {
        self.train_ops
    }

    fn measured_eval_ops(&self) -> u64 {
        self.eval_ops.load(Ordering::Relaxed)
    }
}
