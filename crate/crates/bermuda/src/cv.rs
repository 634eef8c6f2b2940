//! European max-call valuation for independent GBM assets and the outer
//! control-variate adjustment built on it.
//!
//! With independent lognormal marginals, `P(max_i X_T^i <= y) = prod_i F_i(y)`,
//! so the discounted call on the maximum reduces to a one-dimensional
//! integral `e^{-rT} int_kappa^inf (1 - prod_i F_i(y)) dy`, evaluated by
//! adaptive Simpson quadrature on a log-transformed axis.

use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Error;
use crate::model::{ModelParams, TimeGrid};

const REL_TOL: f64 = 1e-8;
const TAIL_CUTOFF: f64 = 1e-12;
const MAX_DEPTH: u32 = 48;

/// Discounted European max-call price `E[e^{-rT} (max_i X_T^i - kappa)^+ | X_t = x]`.
pub fn european_max_call(
    x: &[f64],
    t: f64,
    maturity: f64,
    kappa: f64,
    params: &ModelParams,
) -> Result<f64, Error> {
    if x.len() != params.d {
        return Err(Error::InvalidParams(format!(
            "state has {} components, model has {}",
            x.len(),
            params.d
        )));
    }
    if !(maturity > t) {
        return Err(Error::InvalidParams(format!("need t < T, got t={t}, T={maturity}")));
    }
    if x.iter().any(|&xi| !(xi > 0.0)) {
        return Err(Error::InvalidParams("asset values must be positive".into()));
    }
    let tau = maturity - t;
    let discount = (-params.r * maturity).exp();
    let drift = (params.r - params.delta - 0.5 * params.sigma * params.sigma) * tau;
    let vol = params.sigma * tau.sqrt();

    if vol == 0.0 {
        // degenerate diffusion: the forward max is deterministic
        let fwd_growth = ((params.r - params.delta) * tau).exp();
        let m = x.iter().fold(f64::NEG_INFINITY, |a, &xi| a.max(xi * fwd_growth));
        return Ok(discount * (m - kappa).max(0.0));
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // P(max <= y)
    let cdf_max = |y: f64| -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        x.iter()
            .map(|&xi| normal.cdf(((y / xi).ln() - drift) / vol))
            .product()
    };
    let survival = |y: f64| 1.0 - cdf_max(y);

    // E[(M - kappa)^+] = int_{max(kappa,0)}^inf P(M > y) dy  (- kappa E-term if kappa < 0)
    let lower = kappa.max(0.0);
    let mut upper = x.iter().fold(lower.max(1.0), |a, &xi| a.max(xi * (drift + vol).exp()));
    while survival(upper) > TAIL_CUTOFF {
        upper *= 2.0;
        if !upper.is_finite() {
            return Err(Error::QuadratureAccuracy { achieved: f64::INFINITY });
        }
    }

    // integrate on the log axis: y = e^u, dy = e^u du
    let f = |u: f64| {
        let y = u.exp();
        survival(y) * y
    };
    let (a, b) = ((lower.max(1e-300)).ln(), upper.ln());
    let integral = adaptive_simpson(&f, a, b)?;

    let mut expected = integral;
    if kappa < 0.0 {
        // M > 0 a.s., so (M - kappa)^+ = M - kappa and the tail integral
        // above only covers int_0^inf P(M > y) dy = E[M]
        expected -= kappa;
    }
    Ok(discount * expected)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64, Error> {
    if b <= a {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let scale = whole.abs().max(1e-12);
    // never split tolerances below roundoff noise of the integrand sums,
    // or deep out-of-the-money evaluations chase unattainable accuracy
    let floor = f64::EPSILON * scale;
    simpson_rec(f, a, b, fa, fm, fb, whole, (REL_TOL * scale).max(floor), floor, MAX_DEPTH)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    floor: f64,
    depth: u32,
) -> Result<f64, Error> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureAccuracy { achieved: delta.abs() / 15.0 });
    }
    let child_tol = (0.5 * tol).max(floor);
    let l = simpson_rec(f, a, m, fa, flm, fm, left, child_tol, floor, depth - 1)?;
    let r = simpson_rec(f, m, b, fm, frm, fb, right, child_tol, floor, depth - 1)?;
    Ok(l + r)
}

/// A discounted value process that is a martingale across exercise dates,
/// with a known expectation. Sampled at the stopping time it is an outer
/// control variate; subtracted from the recursion targets it is an inner one.
pub trait ControlVariate: Send + Sync {
    /// Discounted value at exercise date `j` in state `z`; at the last date
    /// this is the payoff the process settles into.
    fn value(&self, j: usize, z: &[f64]) -> f64;
    /// `value(0, x0)` computed in closed form.
    fn expectation(&self) -> f64;
}

/// The European max-call price process `E(Z_j, t_j, T)`: a martingale by the
/// tower property because the discounting is always back to time zero.
pub struct EuropeanControl {
    params: ModelParams,
    grid: TimeGrid,
    kappa: f64,
    expectation: f64,
}

impl EuropeanControl {
    pub fn new(params: ModelParams, grid: TimeGrid, kappa: f64) -> Result<Self, Error> {
        let expectation =
            european_max_call(&params.x0, 0.0, grid.maturity(), kappa, &params)?;
        Ok(EuropeanControl { params, grid, kappa, expectation })
    }
}

impl ControlVariate for EuropeanControl {
    fn value(&self, j: usize, z: &[f64]) -> f64 {
        if j == self.grid.last_index() {
            // at maturity the European price is the discounted payoff itself
            let m = z.iter().fold(f64::NEG_INFINITY, |a, &zi| a.max(zi));
            return (-self.params.r * self.grid.maturity()).exp() * (m - self.kappa).max(0.0);
        }
        european_max_call(z, self.grid.time(j), self.grid.maturity(), self.kappa, &self.params)
            .expect("european max-call quadrature")
    }

    fn expectation(&self) -> f64 {
        self.expectation
    }
}

/// Outer control variate spec handed to the pricers: the martingale sampled
/// at the stopping time plus the coefficient rule.
#[derive(Clone)]
pub struct CvOverlay {
    pub control: Arc<dyn ControlVariate>,
    pub mode: BetaMode,
}

/// How the control-variate coefficient is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    Fixed(f64),
    /// regression-optimal Cov(raw, cv)/Var(cv), estimated from the sample
    Auto,
}

#[derive(Debug, Clone)]
pub struct CvAdjusted {
    pub samples: Vec<f64>,
    pub beta: f64,
}

/// `adjusted_r = raw_r - beta (cv_r - E[cv])`.
pub fn cv_adjust(raw: &[f64], cv: &[f64], cv_expectation: f64, mode: BetaMode) -> CvAdjusted {
    assert_eq!(raw.len(), cv.len(), "one cv sample per raw sample");
    let beta = match mode {
        BetaMode::Fixed(b) => b,
        BetaMode::Auto => {
            let n = cv.len() as f64;
            let mean_cv = cv.iter().sum::<f64>() / n;
            let mean_raw = raw.iter().sum::<f64>() / n;
            let var: f64 = cv.iter().map(|&c| (c - mean_cv).powi(2)).sum();
            if var <= 0.0 {
                0.0
            } else {
                let cov: f64 = raw
                    .iter()
                    .zip(cv)
                    .map(|(&r, &c)| (r - mean_raw) * (c - mean_cv))
                    .sum();
                cov / var
            }
        }
    };
    let samples = raw
        .iter()
        .zip(cv)
        .map(|(&r, &c)| r - beta * (c - cv_expectation))
        .collect();
    CvAdjusted { samples, beta }
}
