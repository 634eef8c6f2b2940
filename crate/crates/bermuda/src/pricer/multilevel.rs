//! Multilevel estimate over approximation levels: level corrections
//! `g_{tau_{k_l}} - g_{tau_{k_{l-1}}}` where both stopping rules come from
//! estimators trained on one shared set of `k_l` training trajectories (the
//! coarse one on its first `k_{l-1}` paths) and are evaluated on the same
//! testing path, so corrections are nonzero only where the two exercise
//! decisions disagree.

use rayon::prelude::*;

use crate::cost::CostTally;
use crate::cv::{cv_adjust, ControlVariate, CvOverlay};
use crate::error::Error;
use crate::estimators::{Continuation, EstimatorKind};
use crate::model::{MarkovModel, PathSet};
use crate::payoff::Payoff;
use crate::pricer::single::{stopped_control_values, stopped_payoffs, stopping_time};
use crate::rng::{tags, StreamKey};
use crate::stats::{mean_and_se, sample_variance};

use std::sync::Arc;

/// Fine/coarse estimator pair trained on one shared training set.
pub struct LevelPair {
    pub fine: Arc<dyn Continuation>,
    pub coarse: Arc<dyn Continuation>,
}

/// How level-l training sets relate across levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// Each level simulates its own training set (the default; keeps the
    /// variance decomposition exact).
    Independent,
    /// Every level draws from one stream, so level l's first `k_{l-1}`
    /// trajectories coincide with level l-1's training set and the
    /// telescoping sum collapses exactly. Diagnostic use only.
    SharedStream,
}

/// Level-0 estimator plus one coupled pair per correction level.
pub struct CoupledEstimators {
    pub level0: Arc<dyn Continuation>,
    pub pairs: Vec<LevelPair>,
    pub ks: Vec<usize>,
}

/// Train the whole level hierarchy: for each level l >= 1 simulate `k_l`
/// training paths once and train the fine estimator on all of them, the
/// coarse on the first `k_{l-1}`.
pub fn train_coupled(
    kind: &EstimatorKind,
    ks: &[usize],
    model: &Arc<dyn MarkovModel>,
    payoff: &Arc<dyn Payoff>,
    stream: StreamKey,
    mode: CouplingMode,
) -> Result<CoupledEstimators, Error> {
    train_coupled_with_control(kind, ks, model, payoff, stream, mode, None)
}

/// As [`train_coupled`], with an optional inner control variate handed to
/// every level's training run.
pub fn train_coupled_with_control(
    kind: &EstimatorKind,
    ks: &[usize],
    model: &Arc<dyn MarkovModel>,
    payoff: &Arc<dyn Payoff>,
    stream: StreamKey,
    mode: CouplingMode,
    control: Option<Arc<dyn ControlVariate>>,
) -> Result<CoupledEstimators, Error> {
    if ks.is_empty() {
        return Err(Error::InvalidSchedule("empty level sequence".into()));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSchedule(format!("k sequence not increasing: {ks:?}")));
    }
    let level_stream = |l: usize| -> StreamKey {
        match mode {
            CouplingMode::Independent => stream.child(tags::LEVEL).child(l as u64),
            CouplingMode::SharedStream => stream.child(tags::LEVEL),
        }
    };
    let training0 = model.simulate_paths(ks[0], level_stream(0));
    let level0 = kind.train_with_control(&training0, payoff, model, control.clone())?;
    let mut pairs = Vec::with_capacity(ks.len() - 1);
    for l in 1..ks.len() {
        let training = model.simulate_paths(ks[l], level_stream(l));
        let fine = kind.train_with_control(&training, payoff, model, control.clone())?;
        let coarse_set = training.prefix(ks[l - 1]);
        let coarse = kind.train_with_control(&coarse_set, payoff, model, control.clone())?;
        pairs.push(LevelPair { fine, coarse });
    }
    Ok(CoupledEstimators { level0, pairs, ks: ks.to_vec() })
}

/// Per-level sample statistics of the correction terms.
#[derive(Debug, Clone)]
pub struct LevelStats {
    pub level: usize,
    pub k: usize,
    pub n: usize,
    pub mean_correction: f64,
    pub var_correction: f64,
    pub cost_units: f64,
}

#[derive(Debug, Clone)]
pub struct MultilevelEstimate {
    pub value: f64,
    pub std_error: f64,
    pub level_stats: Vec<LevelStats>,
    pub cost: CostTally,
}

impl MultilevelEstimate {
    /// Per-level diagnostics table: (l, k_l, n_l, mean_corr, var_corr, cost_l).
    pub fn level_diagnostics(&self) -> Vec<(usize, usize, usize, f64, f64, f64)> {
        self.level_stats
            .iter()
            .map(|s| (s.level, s.k, s.n, s.mean_correction, s.var_correction, s.cost_units))
            .collect()
    }
}

/// Correction samples for one coupled pair on a testing set: both stopping
/// times evaluated on the same path, fine minus coarse.
pub fn correction_samples(
    pair: &LevelPair,
    payoff: &dyn Payoff,
    testing: &PathSet,
) -> (Vec<f64>, u64) {
    let (diffs, _, evals) = correction_samples_with_control(pair, payoff, testing, None);
    (diffs, evals)
}

/// As [`correction_samples`], also returning per-path control differences
/// `h(tau_fine, .) - h(tau_coarse, .)`. Both stopping rules act on the same
/// path and the control is a martingale, so the differences have mean zero
/// exactly and soak up the payoff spread between disagreeing decisions.
pub fn correction_samples_with_control(
    pair: &LevelPair,
    payoff: &dyn Payoff,
    testing: &PathSet,
    control: Option<&dyn ControlVariate>,
) -> (Vec<f64>, Vec<f64>, u64) {
    let results: Vec<(f64, f64, u64)> = (0..testing.count())
        .into_par_iter()
        .map(|i| {
            let path = testing.path(i);
            let last = path.num_dates() - 1;
            let tau_fine = stopping_time(pair.fine.as_ref(), payoff, path);
            let tau_coarse = stopping_time(pair.coarse.as_ref(), payoff, path);
            let diff = payoff.value(tau_fine, path.state(tau_fine))
                - payoff.value(tau_coarse, path.state(tau_coarse));
            let cv_diff = match control {
                Some(h) => {
                    h.value(tau_fine, path.state(tau_fine))
                        - h.value(tau_coarse, path.state(tau_coarse))
                }
                None => 0.0,
            };
            let evals = |tau: usize| if tau == last { tau } else { tau + 1 };
            (diff, cv_diff, (evals(tau_fine) + evals(tau_coarse)) as u64)
        })
        .collect();
    let evals = results.iter().map(|&(_, _, e)| e).sum();
    let cvs = results.iter().map(|&(_, c, _)| c).collect();
    (results.into_iter().map(|(v, _, _)| v).collect(), cvs, evals)
}

/// The telescoped multilevel estimate: level-0 term plus correction means,
/// each level on its own fresh testing set.
pub fn price_multilevel(
    coupled: &CoupledEstimators,
    ns: &[usize],
    model: &Arc<dyn MarkovModel>,
    payoff: &Arc<dyn Payoff>,
    stream: StreamKey,
) -> Result<MultilevelEstimate, Error> {
    price_multilevel_cv(coupled, ns, model, payoff, stream, None)
}

/// Multilevel estimate with an optional outer control variate: the level-0
/// samples are adjusted against the control's expectation and each level
/// correction against the zero-mean control difference at the two stopping
/// times.
pub fn price_multilevel_cv(
    coupled: &CoupledEstimators,
    ns: &[usize],
    model: &Arc<dyn MarkovModel>,
    payoff: &Arc<dyn Payoff>,
    stream: StreamKey,
    cv: Option<&CvOverlay>,
) -> Result<MultilevelEstimate, Error> {
    if ns.len() != coupled.ks.len() {
        return Err(Error::InvalidSchedule(format!(
            "{} testing sizes for {} levels",
            ns.len(),
            coupled.ks.len()
        )));
    }
    if ns.iter().any(|&n| n == 0) {
        return Err(Error::InvalidSchedule("empty level".into()));
    }

    let mut cost = CostTally::default();
    let mut level_stats = Vec::with_capacity(coupled.ks.len());
    let test_stream = |l: usize| stream.child(tags::TESTING).child(l as u64);

    // level 0
    let testing0 = model.simulate_paths(ns[0], test_stream(0));
    let (raw0, taus0, evals0) = stopped_payoffs(coupled.level0.as_ref(), payoff.as_ref(), &testing0);
    let samples0 = match cv {
        None => raw0,
        Some(overlay) => {
            let cvs = stopped_control_values(overlay.control.as_ref(), &testing0, &taus0);
            cv_adjust(&raw0, &cvs, overlay.control.expectation(), overlay.mode).samples
        }
    };
    let (mean0, se0) = mean_and_se(&samples0);
    cost.train_units += coupled.level0.train_cost_units();
    cost.train_calls += 1;
    cost.train_ops += coupled.level0.measured_train_ops();
    cost.eval_calls += evals0;
    cost.eval_units += evals0 as f64 * coupled.level0.eval_cost_units();
    let cost0 = coupled.level0.train_cost_units() + evals0 as f64 * coupled.level0.eval_cost_units();
    level_stats.push(LevelStats {
        level: 0,
        k: coupled.ks[0],
        n: ns[0],
        mean_correction: mean0,
        var_correction: sample_variance(&samples0),
        cost_units: cost0,
    });

    let mut value = mean0;
    let mut variance = se0 * se0;

    for (l, pair) in coupled.pairs.iter().enumerate() {
        let n_l = ns[l + 1];
        let testing = model.simulate_paths(n_l, test_stream(l + 1));
        let (raw_l, cvs_l, evals) = correction_samples_with_control(
            pair,
            payoff.as_ref(),
            &testing,
            cv.map(|ov| ov.control.as_ref()),
        );
        let diffs = match cv {
            // the control difference has mean zero by optional stopping
            Some(overlay) => cv_adjust(&raw_l, &cvs_l, 0.0, overlay.mode).samples,
            None => raw_l,
        };
        let (mean_l, se_l) = mean_and_se(&diffs);
        value += mean_l;
        variance += se_l * se_l;

        let train_l = pair.fine.train_cost_units() + pair.coarse.train_cost_units();
        cost.train_units += train_l;
        cost.train_calls += 2;
        cost.train_ops += pair.fine.measured_train_ops() + pair.coarse.measured_train_ops();
        cost.eval_calls += evals;
        // eval calls split evenly between the fine and coarse estimator sizes
        let eval_units_l =
            (evals as f64 / 2.0) * (pair.fine.eval_cost_units() + pair.coarse.eval_cost_units());
        cost.eval_units += eval_units_l;
        level_stats.push(LevelStats {
            level: l + 1,
            k: coupled.ks[l + 1],
            n: n_l,
            mean_correction: mean_l,
            var_correction: sample_variance(&diffs),
            cost_units: train_l + eval_units_l,
        });
    }

    cost.eval_ops = coupled
        .pairs
        .iter()
        .flat_map(|p| [p.fine.measured_eval_ops(), p.coarse.measured_eval_ops()])
        .sum::<u64>()
        + coupled.level0.measured_eval_ops();

    Ok(MultilevelEstimate { value, std_error: variance.sqrt(), level_stats, cost })
}
