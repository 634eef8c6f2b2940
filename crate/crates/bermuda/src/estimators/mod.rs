//! Continuation-value estimators: the common trained-estimator interface and
//! its three implementations (stochastic mesh, local regression, global
//! regression). Each is trained by a backward recursion over dates on `k`
//! training paths and afterwards evaluates `C_{k,j}(z)` at arbitrary points.

mod global;
mod local;
mod mesh;

pub use global::{Basis, ConstantBasis, GlobalEstimator, PolyPayoffBasis};
pub use local::{bandwidth_rule, LocalEstimator};
pub use mesh::MeshEstimator;

use std::sync::Arc;

use crate::cv::ControlVariate;
use crate::error::Error;
use crate::model::{MarkovModel, PathSet};
use crate::payoff::Payoff;

/// Quality and cost exponents of an estimator family: quality scale
/// `gamma_k = k^{-mu}`, training cost `k^{1+kappa1}`, per-point evaluation
/// cost `k^{kappa2}`, margin exponent `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorProfile {
    pub mu: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub alpha: f64,
}

impl EstimatorProfile {
    pub fn new(mu: f64, kappa1: f64, kappa2: f64, alpha: f64) -> Self {
        assert!(mu > 0.0 && kappa1 > 0.0 && kappa2 > 0.0 && alpha > 0.0);
        EstimatorProfile { mu, kappa1, kappa2, alpha }
    }

    /// Mesh method: `gamma_k = 1/k`, linear training and evaluation cost.
    pub fn mesh() -> Self {
        EstimatorProfile::new(1.0, 1.0, 1.0, 1.0)
    }

    /// Local constant regression on the benchmark: `gamma_k = k^{-1/6}`.
    pub fn local() -> Self {
        EstimatorProfile::new(1.0 / 6.0, 1.0, 1.0, 1.0)
    }

    /// Global regression with `M = k^rho` basis functions.
    pub fn global(rho: f64) -> Self {
        EstimatorProfile::new(1.0, 2.0 * rho, rho, 1.0)
    }

    /// Quality scale `gamma_k`.
    pub fn gamma(&self, k: usize) -> f64 {
        (k as f64).powf(-self.mu)
    }
}

/// A trained family `C_{k,j}(z)`, `j = 0..J`, with `C_{k,J}` identically zero.
pub trait Continuation: Send + Sync {
    /// Evaluate `C_{k,j}(z)`. Deterministic; safe to call concurrently.
    fn value(&self, j: usize, z: &[f64]) -> f64;

    /// Training set size `k`.
    fn training_size(&self) -> usize;

    /// Number of dates including time zero (J + 1).
    fn num_dates(&self) -> usize;

    fn profile(&self) -> EstimatorProfile;

    /// Cost units spent training this estimator: `k^{1+kappa1}`.
    fn train_cost_units(&self) -> f64 {
        let p = self.profile();
        (self.training_size() as f64).powf(1.0 + p.kappa1)
    }

    /// Cost units per point evaluation: `k^{kappa2}`.
    fn eval_cost_units(&self) -> f64 {
        let p = self.profile();
        (self.training_size() as f64).powf(p.kappa2)
    }

    /// Measured arithmetic operations spent in training.
    fn measured_train_ops(&self) -> u64;

    /// Measured arithmetic operations spent in `value` calls so far.
    fn measured_eval_ops(&self) -> u64;
}

/// The recursion target `zeta_{k,j}(z) = max(g_j(z), C_{k,j}(z))`;
/// equals `g_J(z)` at the last date.
pub fn continuation_target(
    trained: &dyn Continuation,
    payoff: &dyn Payoff,
    j: usize,
    z: &[f64],
) -> f64 {
    payoff.value(j, z).max(trained.value(j, z))
}

/// Estimator selection for the harness and CLI.
#[derive(Debug, Clone)]
pub enum EstimatorKind {
    Mesh,
    Local { bandwidth_const: f64 },
    Global { degree: usize },
}

impl EstimatorKind {
    pub fn train(
        &self,
        training: &PathSet,
        payoff: &Arc<dyn Payoff>,
        model: &Arc<dyn MarkovModel>,
    ) -> Arc<dyn Continuation> {
        match self {
            EstimatorKind::Mesh => {
                Arc::new(MeshEstimator::train(training, payoff.as_ref(), Arc::clone(model)))
            }
            EstimatorKind::Local { bandwidth_const } => Arc::new(LocalEstimator::train(
                training,
                payoff.as_ref(),
                *bandwidth_const,
            )),
            EstimatorKind::Global { degree } => {
                let basis = PolyPayoffBasis::new(training.dim(), *degree, Arc::clone(payoff));
                Arc::new(GlobalEstimator::train(training, payoff.as_ref(), Arc::new(basis)))
            }
        }
    }

    /// Training with an optional inner control variate. Only the mesh
    /// supports one; the regression estimators reject it loudly rather than
    /// silently ignoring the request.
    pub fn train_with_control(
        &self,
        training: &PathSet,
        payoff: &Arc<dyn Payoff>,
        model: &Arc<dyn MarkovModel>,
        control: Option<Arc<dyn ControlVariate>>,
    ) -> Result<Arc<dyn Continuation>, Error> {
        match (self, control) {
            (_, None) => Ok(self.train(training, payoff, model)),
            (EstimatorKind::Mesh, Some(h)) => Ok(Arc::new(MeshEstimator::train_controlled(
                training,
                payoff.as_ref(),
                Arc::clone(model),
                Some(h),
            ))),
            _ => Err(Error::Config(
                "inner control variate is only implemented for the mesh estimator".into(),
            )),
        }
    }

    pub fn profile(&self) -> EstimatorProfile {
        match self {
            EstimatorKind::Mesh => EstimatorProfile::mesh(),
            EstimatorKind::Local { .. } => EstimatorProfile::local(),
            // fixed basis: evaluation cost does not grow with k, but we keep
            // the accounting exponents configurable through rho; degree-2
            // default corresponds to a small fixed rho
            EstimatorKind::Global { .. } => EstimatorProfile::global(0.5),
        }
    }
}

/// log(sum(exp(v))) with the usual max subtraction; -inf for an all-(-inf) input.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}
