//! Global least-squares regression: per date, the recursion target is
//! projected onto the span of a fixed basis `psi_1..psi_M` by solving the
//! normal equations `alpha_j = B^{-1} b` with
//! `B_pq = (1/k) sum_i psi_p psi_q` and `b_p = (1/k) sum_i psi_p zeta`.
//! Ill-conditioned systems are solved in the least-squares sense via SVD.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::estimators::{Continuation, EstimatorProfile};
use crate::model::PathSet;
use crate::payoff::Payoff;

/// A date-dependent basis `psi_1(z)..psi_M(z)`.
pub trait Basis: Send + Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn eval_into(&self, j: usize, z: &[f64], out: &mut [f64]);
}

/// Default basis: all monomials of total degree <= `degree` in the d
/// coordinates, plus the payoff `g_j` itself.
pub struct PolyPayoffBasis {
    dim: usize,
    exponents: Vec<Vec<usize>>,
    payoff: Arc<dyn Payoff>,
}

impl PolyPayoffBasis {
    pub fn new(dim: usize, degree: usize, payoff: Arc<dyn Payoff>) -> Self {
        let mut exponents = Vec::new();
        let mut current = vec![0usize; dim];
        gen_monomials(dim, degree, 0, &mut current, &mut exponents);
        PolyPayoffBasis { dim, exponents, payoff }
    }
}

fn gen_monomials(
    dim: usize,
    budget: usize,
    pos: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if pos == dim {
        out.push(current.clone());
        return;
    }
    for e in 0..=budget {
        current[pos] = e;
        gen_monomials(dim, budget - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

impl Basis for PolyPayoffBasis {
    fn len(&self) -> usize {
        self.exponents.len() + 1
    }

    fn eval_into(&self, j: usize, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        for (m, exps) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for (c, &e) in exps.iter().enumerate() {
                for _ in 0..e {
                    v *= z[c];
                }
            }
            out[m] = v;
        }
        out[self.exponents.len()] = self.payoff.value(j, z);
    }
}

/// Basis of the constant function only; intercept-only regression.
pub struct ConstantBasis;

impl Basis for ConstantBasis {
    fn len(&self) -> usize {
        1
    }
    fn eval_into(&self, _j: usize, _z: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
}

/// Per-date solver diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct FitDiagnostics {
    pub rank: usize,
    pub condition: f64,
}

pub struct GlobalEstimator {
    k: usize,
    num_dates: usize,
    basis: Arc<dyn Basis>,
    /// coefficient vectors `alpha_j`, one per date `j = 0..J-1`
    coeffs: Vec<DVector<f64>>,
    diagnostics: Vec<FitDiagnostics>,
    train_ops: u64,
    eval_ops: AtomicU64,
}

impl GlobalEstimator {
    pub fn train(training: &PathSet, payoff: &dyn Payoff, basis: Arc<dyn Basis>) -> Self {
        let k = training.count();
        let dim = training.dim();
        let num_dates = training.num_dates();
        let last = num_dates - 1;
        let m = basis.len();

        let mut coeffs: Vec<DVector<f64>> = vec![DVector::zeros(m); last];
        let mut diagnostics = vec![FitDiagnostics { rank: 0, condition: f64::NAN }; last];
        let mut train_ops: u64 = 0;
        let mut psi = vec![0.0; m];

        for j in (0..last).rev() {
            let date_j = training.date_slice(j);
            let succ = training.date_slice(j + 1);

            // recursion targets at the successor points
            let zeta: Vec<f64> = (0..k)
                .map(|i| {
                    let z = &succ[i * dim..(i + 1) * dim];
                    let g = payoff.value(j + 1, z);
                    if j == last - 1 {
                        g
                    } else {
                        let mut out = vec![0.0; m];
                        basis.eval_into(j + 1, z, &mut out);
                        let c: f64 =
                            out.iter().zip(coeffs[j + 1].iter()).map(|(a, b)| a * b).sum();
                        g.max(c)
                    }
                })
                .collect();
            train_ops += (k * m) as u64;

            // normal equations B alpha = b
            let mut bmat = DMatrix::zeros(m, m);
            let mut bvec = DVector::zeros(m);
            for i in 0..k {
                basis.eval_into(j, &date_j[i * dim..(i + 1) * dim], &mut psi);
                for p in 0..m {
                    bvec[p] += psi[p] * zeta[i];
                    for q in 0..m {
                        bmat[(p, q)] += psi[p] * psi[q];
                    }
                }
            }
            bmat /= k as f64;
            bvec /= k as f64;
            train_ops += (k * m * m) as u64;

            let svd = bmat.svd(true, true);
            let smax = svd.singular_values.max();
            let tol = smax * (m as f64) * f64::EPSILON * 16.0;
            let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
            let smin_pos = svd
                .singular_values
                .iter()
                .cloned()
                .filter(|&s| s > tol)
                .fold(f64::INFINITY, f64::min);
            diagnostics[j] = FitDiagnostics { rank, condition: smax / smin_pos };
            coeffs[j] = svd.solve(&bvec, tol).expect("svd solve");
        }

        GlobalEstimator {
            k,
            num_dates,
            basis,
            coeffs,
            diagnostics,
            train_ops,
            eval_ops: AtomicU64::new(0),
        }
    }

    pub fn coefficients(&self, j: usize) -> &DVector<f64> {
        &self.coeffs[j]
    }

    pub fn diagnostics(&self, j: usize) -> FitDiagnostics {
        self.diagnostics[j]
    }
}

impl Continuation for GlobalEstimator {
    fn value(&self, j: usize, z: &[f64]) -> f64 {
        assert!(j < self.num_dates, "date index out of range");
        if j == self.num_dates - 1 {
            return 0.0;
        }
        let m = self.basis.len();
        self.eval_ops.fetch_add(m as u64, Ordering::Relaxed);
        let mut psi = vec![0.0; m];
        self.basis.eval_into(j, z, &mut psi);
        psi.iter().zip(self.coeffs[j].iter()).map(|(a, b)| a * b).sum()
    }

    fn training_size(&self) -> usize {
        self.k
    }

    fn num_dates(&self) -> usize {
        self.num_dates
    }

    fn profile(&self) -> EstimatorProfile {
        EstimatorProfile::global(0.5)
    }

    fn measured_train_ops(&self) -> u64 {
        self.train_ops
    }

    fn measured_eval_ops(&self) -> u64 {
        self.eval_ops.load(Ordering::Relaxed)
    }
}
