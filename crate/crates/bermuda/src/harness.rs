//! Experiment orchestration: the MSE-over-repetitions protocol, the
//! cost/complexity study and the high-budget reference run, plus CSV output.

use std::io::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{CvMode, ExperimentConfig, Method, Mode};
use crate::cv::{CvOverlay, EuropeanControl};
use crate::error::Error;
use crate::model::{GbmModel, MarkovModel};
use crate::payoff::{MaxCallPayoff, Payoff};
use crate::pricer::{
    price_multilevel_cv, price_single_level_cv, train_coupled_with_control, CouplingMode,
    PriceEstimate,
};
use crate::rng::{tags, StreamKey};
use crate::scheduler::{
    multilevel_complexity_case, multilevel_schedule, single_complexity_exponent,
    single_level_schedule,
};
use crate::stats::{linear_fit, mean_and_se, sample_variance};

pub const CSV_SCHEMA: &str = "bermuda-csv v1";

/// Model + payoff instances for a config.
pub fn build_problem(cfg: &ExperimentConfig) -> (Arc<dyn MarkovModel>, Arc<dyn Payoff>) {
    let model: Arc<dyn MarkovModel> =
        Arc::new(GbmModel::new(cfg.params.clone(), cfg.grid.clone()));
    let payoff: Arc<dyn Payoff> =
        Arc::new(MaxCallPayoff::new(cfg.kappa, cfg.params.r, cfg.grid.clone()));
    (model, payoff)
}

/// Outer control variate overlay for a config, or `None` when CV is off.
pub fn cv_overlay(cfg: &ExperimentConfig) -> Result<Option<CvOverlay>, Error> {
    match cfg.cv.beta_mode() {
        None => Ok(None),
        Some(mode) => {
            let control =
                EuropeanControl::new(cfg.params.clone(), cfg.grid.clone(), cfg.kappa)?;
            Ok(Some(CvOverlay { control: Arc::new(control), mode }))
        }
    }
}

/// Inner (training-side) control variate for a config: the same European
/// price process, handed to the estimator only in `inner` mode.
pub fn inner_control(
    cfg: &ExperimentConfig,
    overlay: Option<&CvOverlay>,
) -> Option<Arc<dyn crate::cv::ControlVariate>> {
    match (cfg.cv, overlay) {
        (CvMode::Inner, Some(ov)) => Some(Arc::clone(&ov.control)),
        _ => None,
    }
}

/// Stored high-budget reference for the GBM benchmark.
#[derive(Debug, Clone)]
pub struct Reference {
    pub value: f64,
    pub std_error: f64,
    pub k: usize,
    pub n: usize,
    pub repetitions: usize,
}

impl Reference {
    pub fn ci_halfwidth(&self) -> f64 {
        1.96 * self.std_error
    }
}

/// Establish the reference price with a mesh run at the largest affordable
/// budget, control variate on, averaged over repetitions with a recorded CI.
pub fn reference_value(cfg: &ExperimentConfig) -> Result<Reference, Error> {
    let (model, payoff) = build_problem(cfg);
    let (k, n, repetitions) =
        if cfg.paper_scale { (2048, 16384, 30) } else { (1024, 8192, 16) };
    let mut ref_cfg = cfg.clone();
    ref_cfg.cv = CvMode::Inner;
    let overlay = cv_overlay(&ref_cfg)?;
    let control = inner_control(&ref_cfg, overlay.as_ref());
    let kind = Method::Mesh.kind();
    let stream = StreamKey::new(cfg.seed).child(tags::REFERENCE);
    let estimates: Vec<f64> = (0..repetitions)
        .map(|rep| {
            let key = stream.child(tags::REPETITION).child(rep as u64);
            let training = model.simulate_paths(k, key.child(tags::TRAINING));
            let trained = kind.train_with_control(&training, &payoff, &model, control.clone())?;
            let testing = model.simulate_paths(n, key.child(tags::TESTING));
            price_single_level_cv(trained.as_ref(), &testing, payoff.as_ref(), overlay.as_ref())
                .map(|e| e.value)
        })
        .collect::<Result<_, _>>()?;
    let (value, std_error) = mean_and_se(&estimates);
    Ok(Reference { value, std_error, k, n, repetitions })
}

/// One repetition of the configured pricer; returns the estimate and its
/// total cost units.
pub fn run_repetition(
    cfg: &ExperimentConfig,
    model: &Arc<dyn MarkovModel>,
    payoff: &Arc<dyn Payoff>,
    epsilon: f64,
    overlay: Option<&CvOverlay>,
    stream: StreamKey,
) -> Result<(f64, f64), Error> {
    let profile = cfg.method.profile();
    let kind = cfg.method.kind();
    match cfg.mode {
        Mode::Single => {
            let sched = single_level_schedule(epsilon, &profile, &cfg.constants)?;
            let training = model.simulate_paths(sched.k, stream.child(tags::TRAINING));
            let trained =
                kind.train_with_control(&training, payoff, model, inner_control(cfg, overlay))?;
            let testing = model.simulate_paths(sched.n, stream.child(tags::TESTING));
            let est: PriceEstimate =
                price_single_level_cv(trained.as_ref(), &testing, payoff.as_ref(), overlay)?;
            Ok((est.value, est.cost.total_units()))
        }
        Mode::Multilevel => {
            let sched = multilevel_schedule(epsilon, &profile, &cfg.constants)?;
            let coupled = train_coupled_with_control(
                &kind,
                &sched.ks,
                model,
                payoff,
                stream.child(tags::TRAINING),
                CouplingMode::Independent,
                inner_control(cfg, overlay),
            )?;
            let est = price_multilevel_cv(
                &coupled,
                &sched.ns,
                model,
                payoff,
                stream.child(tags::TESTING),
                overlay,
            )?;
            Ok((est.value, est.cost.total_units()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct MseRow {
    pub epsilon: f64,
    pub sqrt_mse_over_epsilon: f64,
    pub mean: f64,
    pub bias_est: f64,
    pub var_est: f64,
    pub cost_units: f64,
    pub wall_seconds: f64,
}

/// For each epsilon: R independent train+test repetitions; MSE is the mean
/// squared deviation from the reference.
pub fn run_mse_study(cfg: &ExperimentConfig, reference: &Reference) -> Result<Vec<MseRow>, Error> {
    let (model, payoff) = build_problem(cfg);
    let overlay = cv_overlay(cfg)?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for (ei, &epsilon) in cfg.epsilons.iter().enumerate() {
        let start = Instant::now();
        let eps_stream = StreamKey::new(cfg.seed).child(ei as u64);
        let results: Vec<(f64, f64)> = (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| {
                let key = eps_stream.child(tags::REPETITION).child(rep as u64);
                run_repetition(cfg, &model, &payoff, epsilon, overlay.as_ref(), key)
            })
            .collect::<Result<_, _>>()?;
        let estimates: Vec<f64> = results.iter().map(|&(v, _)| v).collect();
        let mean_cost =
            results.iter().map(|&(_, c)| c).sum::<f64>() / cfg.repetitions as f64;
        let (mean, _) = mean_and_se(&estimates);
        let mse = estimates
            .iter()
            .map(|&v| (v - reference.value).powi(2))
            .sum::<f64>()
            / estimates.len() as f64;
        rows.push(MseRow {
            epsilon,
            sqrt_mse_over_epsilon: mse.sqrt() / epsilon,
            mean,
            bias_est: mean - reference.value,
            var_est: sample_variance(&estimates),
            cost_units: mean_cost,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ComplexityRow {
    pub epsilon: f64,
    pub measured_cost: f64,
    pub predicted_cost: f64,
    pub theoretical_exponent: f64,
}

#[derive(Debug, Clone)]
pub struct ComplexityStudy {
    pub rows: Vec<ComplexityRow>,
    /// log-log fit of measured cost units against 1/epsilon
    pub fitted_slope: f64,
    pub theoretical_exponent: f64,
}

pub fn run_complexity_study(cfg: &ExperimentConfig) -> Result<ComplexityStudy, Error> {
    if cfg.epsilons.len() < 3 {
        return Err(Error::Config(format!(
            "complexity study needs at least 3 epsilon points, got {}",
            cfg.epsilons.len()
        )));
    }
    let (model, payoff) = build_problem(cfg);
    let overlay = cv_overlay(cfg)?;
    let profile = cfg.method.profile();
    let theoretical_exponent = match cfg.mode {
        Mode::Single => single_complexity_exponent(&profile),
        Mode::Multilevel => multilevel_complexity_case(&profile).exponent(),
    };
    let rows: Vec<ComplexityRow> = cfg
        .epsilons
        .iter()
        .enumerate()
        .map(|(ei, &epsilon)| {
            let predicted_cost = match cfg.mode {
                Mode::Single => {
                    let s = single_level_schedule(epsilon, &profile, &cfg.constants)?;
                    (s.k as f64).powf(profile.kappa1 + 1.0)
                        + s.n as f64 * (s.k as f64).powf(profile.kappa2)
                }
                Mode::Multilevel => {
                    multilevel_schedule(epsilon, &profile, &cfg.constants)?.predicted_cost
                }
            };
            // a single repetition: the cost tally is schedule-driven and
            // nearly deterministic across seeds
            let key = StreamKey::new(cfg.seed).child(ei as u64).child(tags::REPETITION);
            let (_, measured_cost) =
                run_repetition(cfg, &model, &payoff, epsilon, overlay.as_ref(), key)?;
            Ok(ComplexityRow { epsilon, measured_cost, predicted_cost, theoretical_exponent })
        })
        .collect::<Result<_, Error>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.measured_cost.ln()).collect();
    let (fitted_slope, _) = linear_fit(&xs, &ys);
    Ok(ComplexityStudy { rows, fitted_slope, theoretical_exponent })
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with a schema comment, a reference-metadata comment and one row per
/// epsilon. All floats carry 17 significant digits.
pub fn mse_csv(cfg: &ExperimentConfig, reference: &Reference, rows: &[MseRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {CSV_SCHEMA} mse-study\n"));
    out.push_str(&format!(
        "# method={} mode={:?} repetitions={} seed={}\n",
        cfg.method.name(),
        cfg.mode,
        cfg.repetitions,
        cfg.seed
    ));
    out.push_str(&format!(
        "# reference value={} se={} k={} n={} repetitions={}\n",
        fmt(reference.value),
        fmt(reference.std_error),
        reference.k,
        reference.n,
        reference.repetitions
    ));
    out.push_str("epsilon,sqrt_mse_over_epsilon,mean,bias_est,var_est,cost_units,wall_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt(r.epsilon),
            fmt(r.sqrt_mse_over_epsilon),
            fmt(r.mean),
            fmt(r.bias_est),
            fmt(r.var_est),
            fmt(r.cost_units),
            fmt(r.wall_seconds)
        ));
    }
    out
}

pub fn complexity_csv(study: &ComplexityStudy) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {CSV_SCHEMA} complexity-study\n"));
    out.push_str(&format!("# fitted_slope={}\n", fmt(study.fitted_slope)));
    out.push_str("epsilon,measured_cost,predicted_cost,theoretical_exponent\n");
    for r in &study.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt(r.epsilon),
            fmt(r.measured_cost),
            fmt(r.predicted_cost),
            fmt(r.theoretical_exponent)
        ));
    }
    out
}

/// Write text to the configured output path, or stdout when none is set.
pub fn emit(cfg: &ExperimentConfig, text: &str) -> Result<(), Error> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::Io(format!("stdout: {e}")))
        }
    }
}

/// DP-oracle invariant suite run by the `oracle-check` subcommand: returns
/// (name, passed) pairs.
pub fn run_oracle_check() -> Vec<(&'static str, bool)> {
    use crate::model::TimeGrid;
    use crate::oracle::{binomial_fixture, random_chain_fixture, OracleContinuation};
    use crate::payoff::MaxCallPayoff;
    use crate::pricer::price_single_level;

    let mut results = Vec::new();
    let chain = Arc::new(binomial_fixture(100.0, 0.05, 0.1, 0.2, 3.0, 3, 8));
    let grid = TimeGrid::equidistant(3.0, 3).unwrap();
    let payoff = MaxCallPayoff::new(100.0, 0.05, grid);
    let sol = chain.dp_solve(&payoff);

    results.push(("dp_value_is_max_of_payoff_and_continuation", {
        (0..chain.states.len()).all(|j| {
            chain.states[j].iter().enumerate().all(|(s, &z)| {
                (sol.value[j][s] - payoff.value(j, &[z]).max(sol.cont[j][s])).abs() < 1e-12
            })
        })
    }));
    results.push(("terminal_continuation_is_zero", sol.cont.last().unwrap().iter().all(|&c| c == 0.0)));
    results.push(("price_at_least_immediate_exercise", sol.price >= payoff.value(0, &[100.0])));

    let oracle = OracleContinuation::new(Arc::clone(&chain), &payoff);
    let model: Arc<dyn MarkovModel> = chain.clone() as Arc<dyn MarkovModel>;
    let testing = model.simulate_paths(4000, StreamKey::new(17));
    let est = price_single_level(&oracle, &testing, &payoff).unwrap();
    results.push((
        "oracle_policy_prices_within_3_se",
        (est.value - sol.price).abs() <= 3.0 * est.std_error,
    ));

    let random = random_chain_fixture(5, 3, 99);
    let rt = &random.trans;
    results.push((
        "random_chain_rows_stochastic",
        rt.iter().all(|m| {
            m.iter().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < 1e-12)
        }),
    ));
    results
}
