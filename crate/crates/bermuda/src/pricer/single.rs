//! The stopping rule `tau_k = min{j : g_j(Z_j) >= C_{k,j}(Z_j)}` and the
//! single-level low-biased estimate: the sample mean of `g_tau` over fresh
//! testing trajectories.

use rayon::prelude::*;

use crate::cost::CostTally;
use crate::cv::{cv_adjust, CvOverlay};
use crate::error::Error;
use crate::estimators::{Continuation, EstimatorKind};
use crate::model::{MarkovModel, PathSet, PathView};
use crate::payoff::Payoff;
use crate::rng::{tags, StreamKey};
use crate::stats::{linear_fit, mean_and_se};

use std::sync::Arc;

/// Result of one single-level pricing run.
#[derive(Debug, Clone)]
pub struct PriceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub k: usize,
    /// control-variate coefficient actually applied (0 when CV is off)
    pub beta: f64,
    pub cost: CostTally,
}

/// Control-variate value of each testing path, sampled at its stopping
/// time. The control is a martingale in the date index, so by optional
/// stopping these samples have mean `control.expectation()` for any rule.
pub fn stopped_control_values(
    control: &dyn crate::cv::ControlVariate,
    testing: &PathSet,
    taus: &[usize],
) -> Vec<f64> {
    (0..testing.count())
        .into_par_iter()
        .map(|i| control.value(taus[i], testing.path(i).state(taus[i])))
        .collect()
}

/// First date at which the payoff is at least the estimated continuation
/// value; ties exercise. Always at most J because `C_{k,J}` is zero and the
/// payoff is nonnegative.
pub fn stopping_time(trained: &dyn Continuation, payoff: &dyn Payoff, path: PathView<'_>) -> usize {
    let last = path.num_dates() - 1;
    for j in 0..last {
        let z = path.state(j);
        if payoff.value(j, z) >= trained.value(j, z) {
            return j;
        }
    }
    last
}

/// Discounted payoff at the stopping time, one value per testing path,
/// in path order regardless of thread count. Also reports the number of
/// estimator point evaluations spent.
pub fn path_payoffs(
    trained: &dyn Continuation,
    payoff: &dyn Payoff,
    testing: &PathSet,
) -> (Vec<f64>, u64) {
    let (values, _taus, evals) = stopped_payoffs(trained, payoff, testing);
    (values, evals)
}

/// As [`path_payoffs`], but also returns the stopping time of every path so
/// a control variate can be sampled at the same dates.
pub fn stopped_payoffs(
    trained: &dyn Continuation,
    payoff: &dyn Payoff,
    testing: &PathSet,
) -> (Vec<f64>, Vec<usize>, u64) {
    let results: Vec<(f64, usize, u64)> = (0..testing.count())
        .into_par_iter()
        .map(|i| {
            let path = testing.path(i);
            let tau = stopping_time(trained, payoff, path);
            // evaluations happened at dates 0..=tau, but never at date J
            let evals = if tau == path.num_dates() - 1 { tau } else { tau + 1 };
            (payoff.value(tau, path.state(tau)), tau, evals as u64)
        })
        .collect();
    let evals = results.iter().map(|&(_, _, e)| e).sum();
    let taus = results.iter().map(|&(_, t, _)| t).collect();
    (results.into_iter().map(|(v, _, _)| v).collect(), taus, evals)
}

/// The single-level estimate with its standard error and cost tally.
/// Training cost of `trained` is charged here as well so a run's tally is
/// self-contained.
pub fn price_single_level(
    trained: &dyn Continuation,
    testing: &PathSet,
    payoff: &dyn Payoff,
) -> Result<PriceEstimate, Error> {
    price_single_level_cv(trained, testing, payoff, None)
}

/// Single-level estimate with an optional outer control variate applied to
/// the payoff samples.
pub fn price_single_level_cv(
    trained: &dyn Continuation,
    testing: &PathSet,
    payoff: &dyn Payoff,
    cv: Option<&CvOverlay>,
) -> Result<PriceEstimate, Error> {
    if testing.count() == 0 {
        return Err(Error::EmptyTestingSet);
    }
    let (raw, taus, evals) = stopped_payoffs(trained, payoff, testing);
    let (samples, beta) = match cv {
        None => (raw, 0.0),
        Some(overlay) => {
            let cvs = stopped_control_values(overlay.control.as_ref(), testing, &taus);
            let adjusted = cv_adjust(&raw, &cvs, overlay.control.expectation(), overlay.mode);
            (adjusted.samples, adjusted.beta)
        }
    };
    let (value, std_error) = mean_and_se(&samples);
    let mut cost = CostTally::default();
    cost.train_units = trained.train_cost_units();
    cost.train_calls = 1;
    cost.train_ops = trained.measured_train_ops();
    cost.eval_calls = evals;
    cost.eval_units = evals as f64 * trained.eval_cost_units();
    cost.eval_ops = trained.measured_eval_ops();
    Ok(PriceEstimate {
        value,
        std_error,
        n: testing.count(),
        k: trained.training_size(),
        beta,
        cost,
    })
}

/// One row of an empirical bias study.
#[derive(Debug, Clone)]
pub struct BiasPoint {
    pub k: usize,
    pub mean: f64,
    pub std_error: f64,
    pub bias: f64,
}

#[derive(Debug, Clone)]
pub struct BiasCurve {
    pub points: Vec<BiasPoint>,
    /// log-log slope of |bias| against k
    pub slope: f64,
}

/// Empirical bias against a reference value: for each k, train and test
/// `repetitions` times with fresh independent streams, record the mean
/// estimate, and fit the log-log decay of the absolute bias.
pub fn estimate_bias_curve(
    kind: &EstimatorKind,
    model: &Arc<dyn MarkovModel>,
    payoff: &Arc<dyn Payoff>,
    k_grid: &[usize],
    n: usize,
    repetitions: usize,
    reference: f64,
    stream: StreamKey,
) -> BiasCurve {
    estimate_bias_curve_cv(kind, model, payoff, k_grid, n, repetitions, reference, stream, None)
        .expect("bias curve without control variates")
}

/// As [`estimate_bias_curve`], with an optional control variate overlay;
/// the control is also used inside the training recursion where the
/// estimator supports it, which sharpens the bias measurement considerably.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bias_curve_cv(
    kind: &EstimatorKind,
    model: &Arc<dyn MarkovModel>,
    payoff: &Arc<dyn Payoff>,
    k_grid: &[usize],
    n: usize,
    repetitions: usize,
    reference: f64,
    stream: StreamKey,
    cv: Option<&CvOverlay>,
) -> Result<BiasCurve, Error> {
    let mut points = Vec::with_capacity(k_grid.len());
    for (ki, &k) in k_grid.iter().enumerate() {
        let key = stream.child(ki as u64);
        let estimates: Vec<f64> = (0..repetitions)
            .map(|rep| {
                let rep_key = key.child(tags::REPETITION).child(rep as u64);
                let training = model.simulate_paths(k, rep_key.child(tags::TRAINING));
                let control = cv.map(|ov| Arc::clone(&ov.control));
                let trained = kind.train_with_control(&training, payoff, model, control)?;
                let testing = model.simulate_paths(n, rep_key.child(tags::TESTING));
                price_single_level_cv(trained.as_ref(), &testing, payoff.as_ref(), cv)
                    .map(|e| e.value)
            })
            .collect::<Result<_, _>>()?;
        let (mean, se) = mean_and_se(&estimates);
        points.push(BiasPoint { k, mean, std_error: se, bias: mean - reference });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.k as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.bias.abs().max(1e-300).ln()).collect();
    let (slope, _) = linear_fit(&xs, &ys);
    Ok(BiasCurve { points, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorProfile;
    use crate::model::TimeGrid;
    use crate::oracle::{binomial_fixture, OracleContinuation};
    use crate::payoff::MaxCallPayoff;

    /// Estimator returning a fixed value at every date before J.
    struct ConstEstimator {
        c: f64,
        num_dates: usize,
    }
    impl Continuation for ConstEstimator {
        fn value(&self, j: usize, _z: &[f64]) -> f64 {
            if j == self.num_dates - 1 {
                0.0
            } else {
                self.c
            }
        }
        fn training_size(&self) -> usize {
            1
        }
        fn num_dates(&self) -> usize {
            self.num_dates
        }
        fn profile(&self) -> EstimatorProfile {
            EstimatorProfile::mesh()
        }
        fn measured_train_ops(&self) -> u64 {
            0
        }
        fn measured_eval_ops(&self) -> u64 {
            0
        }
    }

    fn fixture() -> (Arc<crate::oracle::DiscreteChain>, MaxCallPayoff) {
        let chain = Arc::new(binomial_fixture(100.0, 0.05, 0.1, 0.2, 3.0, 3, 8));
        let grid = TimeGrid::equidistant(3.0, 3).unwrap();
        (chain, MaxCallPayoff::new(100.0, 0.05, grid))
    }

    #[test]
    fn zero_estimator_stops_immediately() {
        let (chain, payoff) = fixture();
        let paths = chain.simulate_paths(16, StreamKey::new(1));
        let est = ConstEstimator { c: 0.0, num_dates: 4 };
        for i in 0..16 {
            assert_eq!(stopping_time(&est, &payoff, paths.path(i)), 0);
        }
    }

    #[test]
    fn huge_estimator_never_stops_early() {
        let (chain, payoff) = fixture();
        let paths = chain.simulate_paths(16, StreamKey::new(2));
        let est = ConstEstimator { c: 1e12, num_dates: 4 };
        for i in 0..16 {
            assert_eq!(stopping_time(&est, &payoff, paths.path(i)), 3);
        }
    }

    #[test]
    fn zero_estimator_prices_immediate_exercise() {
        let (chain, payoff) = fixture();
        let paths = chain.simulate_paths(64, StreamKey::new(3));
        let est = ConstEstimator { c: 0.0, num_dates: 4 };
        let price = price_single_level(&est, &paths, &payoff).unwrap();
        // common start: every path pays g_0(x0), zero spread
        assert_eq!(price.value, payoff.value(0, &[100.0]));
        assert_eq!(price.std_error, 0.0);
    }

    #[test]
    fn oracle_stopping_matches_dp_decisions() {
        // with the exact continuation values, tau equals the first date
        // where g >= C*, i.e. the DP-optimal rule with ties exercised
        let (chain, payoff) = fixture();
        let oracle = OracleContinuation::new(Arc::clone(&chain), &payoff);
        let sol = chain.dp_solve(&payoff);
        let paths = chain.simulate_paths(200, StreamKey::new(4));
        for i in 0..200 {
            let tau = stopping_time(&oracle, &payoff, paths.path(i));
            // recompute from tables
            let mut expect = 3;
            for j in 0..3 {
                let v = paths.state(i, j)[0];
                let s = chain.state_index(j, v).unwrap();
                if payoff.value(j, &[v]) >= sol.cont[j][s] {
                    expect = j;
                    break;
                }
            }
            assert_eq!(tau, expect);
        }
    }

    #[test]
    fn stopping_family_is_consistent() {
        // restart property: if tau (from j) exceeds j, it equals the rule
        // restarted at j+1
        let (chain, payoff) = fixture();
        let oracle = OracleContinuation::new(Arc::clone(&chain), &payoff);
        let paths = chain.simulate_paths(100, StreamKey::new(5));
        let tau_from = |i: usize, start: usize| -> usize {
            let path = paths.path(i);
            for j in start..3 {
                let z = path.state(j);
                if payoff.value(j, z) >= oracle.value(j, z) {
                    return j;
                }
            }
            3
        };
        for i in 0..100 {
            for j in 0..3 {
                let t = tau_from(i, j);
                if t > j {
                    assert_eq!(t, tau_from(i, j + 1));
                }
            }
        }
    }

    #[test]
    fn low_bias_at_the_optimum() {
        // pricing with the exact C* is unbiased up to Monte Carlo noise:
        // over repetitions, mean <= V0* + 3 SE and within the CI
        let (chain, payoff) = fixture();
        let oracle = OracleContinuation::new(Arc::clone(&chain), &payoff);
        let v0 = oracle.price();
        let estimates: Vec<f64> = (0..100)
            .map(|rep| {
                let key = StreamKey::new(60).child(tags::REPETITION).child(rep);
                let testing = chain.simulate_paths(400, key);
                price_single_level(&oracle, &testing, &payoff).unwrap().value
            })
            .collect();
        let (mean, se) = mean_and_se(&estimates);
        assert!(mean <= v0 + 3.0 * se, "mean {mean} vs V0* {v0} (se {se})");
        assert!((mean - v0).abs() <= 3.0 * se, "mean {mean} vs V0* {v0} (se {se})");
    }

    #[test]
    fn variance_identity() {
        let (chain, payoff) = fixture();
        let oracle = OracleContinuation::new(Arc::clone(&chain), &payoff);
        let testing = chain.simulate_paths(500, StreamKey::new(61));
        let price = price_single_level(&oracle, &testing, &payoff).unwrap();
        let (samples, _) = path_payoffs(&oracle, &payoff, &testing);
        let var = crate::stats::sample_variance(&samples);
        assert!((price.std_error * price.std_error - var / 500.0).abs() < 1e-12);
    }

    #[test]
    fn empty_testing_set_is_an_error() {
        let (_, payoff) = fixture();
        let est = ConstEstimator { c: 0.0, num_dates: 4 };
        let empty = PathSet::with_states(0, 1, 4, Vec::new(), "empty".into());
        assert!(price_single_level(&est, &empty, &payoff).is_err());
    }
}
