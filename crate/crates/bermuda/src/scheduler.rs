//! Closed-form parameter schedules: how many training paths, testing paths
//! and levels to spend for a target accuracy `epsilon`, plus the predicted
//! complexity exponents these choices achieve.

use crate::error::Error;
use crate::estimators::EstimatorProfile;

/// Calibration constants entering the benchmark schedule rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConstants {
    /// `c` in the single-level rule `k = ceil((eps/c)^{-2/(mu(1+alpha))})`,
    /// `n = ceil((eps/c)^{-2})`.
    pub single_scale: f64,
    /// starting training size `k_0` of the geometric level sequence
    pub k0: usize,
    /// geometric growth factor `theta` of `k_l = k0 * theta^l`
    pub theta: f64,
    /// prefactor of the `n_l` display (its `eps^{-2}` coefficient)
    pub n_prefactor: f64,
    /// how the number of levels is chosen from `epsilon`
    pub level_rule: LevelRule,
}

/// The two level-count rules used in the benchmark experiments, plus the
/// generic rule of the multilevel complexity theorem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelRule {
    /// `L = ceil(log_theta(8 k0 / eps))`
    MeshBenchmark,
    /// `L = ceil(6 log_theta(3 / (eps k0^{1/6})))`
    LocalBenchmark,
    /// `L = ceil((2/(mu(1+alpha))) log_theta(eps^{-1} k0^{-mu(1+alpha)/2}))`
    Theorem,
}

impl ScheduleConstants {
    pub fn mesh() -> Self {
        ScheduleConstants {
            single_scale: 2.4,
            k0: 5,
            theta: 2.0,
            n_prefactor: 64.0, // 1/(eps/8)^2 = 64 eps^{-2}
            level_rule: LevelRule::MeshBenchmark,
        }
    }

    pub fn local() -> Self {
        ScheduleConstants {
            single_scale: 1.2,
            k0: 100,
            theta: 2.0,
            n_prefactor: 90.0, // 10/(eps/3)^2 = 90 eps^{-2}
            level_rule: LevelRule::LocalBenchmark,
        }
    }

    /// Uncalibrated constants for profiles without a benchmark section.
    pub fn generic(k0: usize) -> Self {
        ScheduleConstants {
            single_scale: 1.0,
            k0,
            theta: 2.0,
            n_prefactor: 1.0,
            level_rule: LevelRule::Theorem,
        }
    }
}

/// Single-level budget `(k, n)` for accuracy `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingleSchedule {
    pub k: usize,
    pub n: usize,
}

pub fn single_level_schedule(
    epsilon: f64,
    profile: &EstimatorProfile,
    constants: &ScheduleConstants,
) -> Result<SingleSchedule, Error> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidSchedule(format!("epsilon must be positive, got {epsilon}")));
    }
    let scaled = epsilon / constants.single_scale;
    let k = scaled.powf(-2.0 / (profile.mu * (1.0 + profile.alpha)));
    let n = scaled.powi(-2);
    Ok(SingleSchedule { k: ceil_at_least_one(k)?, n: ceil_at_least_one(n)? })
}

/// The full multilevel budget.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchedule {
    pub epsilon: f64,
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    /// real-valued `n_l` before rounding; kept for slope fits
    pub ns_real: Vec<f64>,
    pub predicted_cost: f64,
}

impl LevelSchedule {
    pub fn num_levels(&self) -> usize {
        self.ks.len() - 1
    }
}

pub fn num_levels(epsilon: f64, profile: &EstimatorProfile, constants: &ScheduleConstants) -> usize {
    let k0 = constants.k0 as f64;
    let theta = constants.theta;
    let raw = match constants.level_rule {
        LevelRule::MeshBenchmark => (8.0 * k0 / epsilon).log(theta),
        LevelRule::LocalBenchmark => 6.0 * (3.0 / (epsilon * k0.powf(1.0 / 6.0))).log(theta),
        LevelRule::Theorem => {
            let m = profile.mu * (1.0 + profile.alpha);
            (2.0 / m) * (k0.powf(-m / 2.0) / epsilon).log(theta)
        }
    };
    (raw.ceil() as i64).max(1) as usize
}

/// Multilevel schedule: `k_l = k0 theta^l` for `l = 0..=L` and
/// `n_l = prefactor eps^{-2} (sum_{i=1}^L sqrt(k_i^{x2 - mu a/2})) sqrt(k_l^{-x2 - mu a/2})`.
pub fn multilevel_schedule(
    epsilon: f64,
    profile: &EstimatorProfile,
    constants: &ScheduleConstants,
) -> Result<LevelSchedule, Error> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidSchedule(format!("epsilon must be positive, got {epsilon}")));
    }
    if constants.theta <= 1.0 {
        return Err(Error::InvalidSchedule(format!("theta must exceed 1, got {}", constants.theta)));
    }
    if constants.k0 == 0 {
        return Err(Error::InvalidSchedule("k0 must be positive".into()));
    }
    let levels = num_levels(epsilon, profile, constants);
    let ks_real: Vec<f64> =
        (0..=levels).map(|l| constants.k0 as f64 * constants.theta.powi(l as i32)).collect();
    let ks: Vec<usize> = ks_real.iter().map(|&k| k.round() as usize).collect();

    let half = profile.mu * profile.alpha / 2.0;
    let sum: f64 =
        ks_real[1..].iter().map(|&k| k.powf(profile.kappa2 - half).sqrt()).sum();
    let ns_real: Vec<f64> = ks_real
        .iter()
        .map(|&k| {
            constants.n_prefactor * epsilon.powi(-2) * sum * k.powf(-profile.kappa2 - half).sqrt()
        })
        .collect();
    let ns: Vec<usize> = ns_real
        .iter()
        .map(|&n| ceil_at_least_one(n))
        .collect::<Result<_, _>>()?;

    let predicted_cost = ks
        .iter()
        .zip(&ns)
        .map(|(&k, &n)| {
            let k = k as f64;
            k.powf(profile.kappa1 + 1.0) + n as f64 * k.powf(profile.kappa2)
        })
        .sum();

    Ok(LevelSchedule { epsilon, ks, ns, ns_real, predicted_cost })
}

fn ceil_at_least_one(x: f64) -> Result<usize, Error> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidSchedule(format!("non-finite budget {x}")));
    }
    Ok((x.ceil() as usize).max(1))
}

/// Complexity exponent of the single-level estimator:
/// `2 max((kappa1+1)/(mu(1+alpha)), 1 + kappa2/(mu(1+alpha)))`.
pub fn single_complexity_exponent(profile: &EstimatorProfile) -> f64 {
    let m = profile.mu * (1.0 + profile.alpha);
    2.0 * ((profile.kappa1 + 1.0) / m).max(1.0 + profile.kappa2 / m)
}

/// Which case of the multilevel complexity theorem applies, and its exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComplexityCase {
    /// `2 kappa2 < mu alpha`
    SmallKappa { exponent: f64 },
    /// `2 kappa2 = mu alpha`, training-dominated
    BoundaryTraining { exponent: f64 },
    /// `2 kappa2 = mu alpha`, `eps^{-2} log^2(eps)` regime
    BoundaryLog,
    /// `2 kappa2 > mu alpha`
    LargeKappa { exponent: f64 },
}

impl ComplexityCase {
    /// The power of `eps^{-1}` (log factors dropped).
    pub fn exponent(&self) -> f64 {
        match *self {
            ComplexityCase::SmallKappa { exponent }
            | ComplexityCase::BoundaryTraining { exponent }
            | ComplexityCase::LargeKappa { exponent } => exponent,
            ComplexityCase::BoundaryLog => 2.0,
        }
    }
}

pub fn multilevel_complexity_case(profile: &EstimatorProfile) -> ComplexityCase {
    let m = profile.mu * (1.0 + profile.alpha);
    let train = (profile.kappa1 + 1.0) / m;
    let threshold = profile.mu * profile.alpha;
    if 2.0 * profile.kappa2 < threshold {
        ComplexityCase::SmallKappa { exponent: 2.0 * train.max(1.0) }
    } else if 2.0 * profile.kappa2 == threshold {
        if train > 1.0 {
            ComplexityCase::BoundaryTraining { exponent: 2.0 * train }
        } else {
            ComplexityCase::BoundaryLog
        }
    } else {
        let eval = 1.0 + (profile.kappa2 - threshold / 2.0) / m;
        ComplexityCase::LargeKappa { exponent: 2.0 * train.max(eval) }
    }
}

/// `eps^{-gain}` saved by going multilevel; `None` when the theorem promises
/// no superiority (`mu(1+alpha) <= 1`).
pub fn multilevel_gain_exponent(profile: &EstimatorProfile) -> Option<f64> {
    let m = profile.mu * (1.0 + profile.alpha);
    if m <= 1.0 {
        return None;
    }
    let gain = single_complexity_exponent(profile) - multilevel_complexity_case(profile).exponent();
    Some(gain.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_single_rule_benchmark_point() {
        let s =
            single_level_schedule(0.24, &EstimatorProfile::mesh(), &ScheduleConstants::mesh())
                .unwrap();
        assert_eq!(s, SingleSchedule { k: 10, n: 100 });
    }

    #[test]
    fn local_single_rule_benchmark_points() {
        let c = ScheduleConstants::local();
        let p = EstimatorProfile::local();
        assert_eq!(single_level_schedule(1.2, &p, &c).unwrap(), SingleSchedule { k: 1, n: 1 });
        assert_eq!(single_level_schedule(0.6, &p, &c).unwrap(), SingleSchedule { k: 64, n: 4 });
    }

    #[test]
    fn mesh_level_count_rule() {
        let c = ScheduleConstants::mesh();
        let p = EstimatorProfile::mesh();
        // L = ceil(log2(40/eps))
        assert_eq!(num_levels(2.5, &p, &c), 4);
        assert_eq!(num_levels(5.0, &p, &c), 3);
        for &(eps, want) in &[(20.0, 1), (10.0, 2), (1.25, 5), (0.625, 6), (0.3125, 7)] {
            assert_eq!(num_levels(eps, &p, &c), want, "eps={eps}");
        }
    }

    #[test]
    fn mesh_levels_are_geometric() {
        let sched =
            multilevel_schedule(2.5, &EstimatorProfile::mesh(), &ScheduleConstants::mesh())
                .unwrap();
        assert_eq!(sched.ks, vec![5, 10, 20, 40, 80]);
        assert_eq!(sched.num_levels(), 4);
    }

    #[test]
    fn mesh_n_formula_transcription() {
        // n_l = (1/(eps/8)^2) (sum_{i=1}^L sqrt(k_i^{1/2})) sqrt(k_l^{-3/2})
        let eps = 2.5;
        let sched =
            multilevel_schedule(eps, &EstimatorProfile::mesh(), &ScheduleConstants::mesh())
                .unwrap();
        let ks: Vec<f64> = sched.ks.iter().map(|&k| k as f64).collect();
        let sum: f64 = ks[1..].iter().map(|k| k.powf(0.5).sqrt()).sum();
        for (l, &k) in ks.iter().enumerate() {
            let expect = (eps / 8.0).powi(-2) * sum * k.powf(-1.5).sqrt();
            assert!((sched.ns_real[l] - expect).abs() < 1e-12 * expect);
            assert_eq!(sched.ns[l], (expect.ceil() as usize).max(1));
        }
    }

    #[test]
    fn local_schedule_transcription_over_epsilon_grid() {
        // exact integer agreement with the displayed local-regression rules
        // for a spread of epsilon values
        let c = ScheduleConstants::local();
        let p = EstimatorProfile::local();
        let mut eps = 0.11;
        for step in 0..100 {
            eps += 0.029 * (1.0 + (step % 7) as f64 / 11.0);
            let k0 = 100f64;
            let levels = (6.0 * (3.0 / (eps * k0.powf(1.0 / 6.0))).log2()).ceil().max(1.0) as usize;
            let sched = multilevel_schedule(eps, &p, &c).unwrap();
            assert_eq!(sched.num_levels(), levels, "eps={eps}");
            let ks: Vec<f64> = (0..=levels).map(|l| 100.0 * 2f64.powi(l as i32)).collect();
            let sum: f64 = ks[1..].iter().map(|k| k.powf(11.0 / 12.0).sqrt()).sum();
            for (l, &k) in ks.iter().enumerate() {
                let n = 10.0 / (eps / 3.0).powi(2) * sum * k.powf(-13.0 / 12.0).sqrt();
                assert_eq!(sched.ns[l], (n.ceil() as usize).max(1), "eps={eps} l={l}");
            }
        }
    }

    #[test]
    fn complexity_exponents_for_benchmark_profiles() {
        // mesh: single 3, multilevel 2.5 (case 2 kappa2 > mu alpha)
        let mesh = EstimatorProfile::mesh();
        assert!((single_complexity_exponent(&mesh) - 3.0).abs() < 1e-12);
        let case = multilevel_complexity_case(&mesh);
        assert!(matches!(case, ComplexityCase::LargeKappa { .. }));
        assert!((case.exponent() - 2.5).abs() < 1e-12);
        assert!((multilevel_gain_exponent(&mesh).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_multilevel_gain_when_rate_product_small() {
        // local regression has mu(1+alpha) = 1/3 <= 1
        assert_eq!(multilevel_gain_exponent(&EstimatorProfile::local()), None);
        // single-level local exponent: 2 max(6, 1 + 3) = 12
        assert!((single_complexity_exponent(&EstimatorProfile::local()) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_log_case() {
        // 2 kappa2 = mu alpha with (kappa1+1)/(mu(1+alpha)) <= 1
        let p = EstimatorProfile { mu: 1.0, kappa1: 0.5, kappa2: 0.5, alpha: 1.0 };
        assert_eq!(multilevel_complexity_case(&p), ComplexityCase::BoundaryLog);
        assert_eq!(multilevel_complexity_case(&p).exponent(), 2.0);
        // same boundary, training-dominated
        let q = EstimatorProfile { mu: 1.0, kappa1: 3.0, kappa2: 0.5, alpha: 1.0 };
        let case = multilevel_complexity_case(&q);
        assert!(matches!(case, ComplexityCase::BoundaryTraining { .. }));
        assert!((case.exponent() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn schedules_are_monotone_in_epsilon() {
        let c = ScheduleConstants::mesh();
        let p = EstimatorProfile::mesh();
        let mut grid: Vec<f64> = (0..60).map(|i| 0.2 + 0.11 * i as f64).collect();
        grid.reverse(); // tightening accuracy demand -> growing budgets
        let mut prev_cost = 0.0;
        let mut prev_k = 0usize;
        for eps in grid {
            let single = single_level_schedule(eps, &p, &c).unwrap();
            assert!(single.k >= prev_k);
            prev_k = single.k;
            let ml = multilevel_schedule(eps, &p, &c).unwrap();
            assert!(ml.predicted_cost >= prev_cost * (1.0 - 1e-9));
            prev_cost = ml.predicted_cost;
            // n_l decreasing in l is not guaranteed after rounding, but the
            // real-valued schedule is strictly decreasing
            for w in ml.ns_real.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = ScheduleConstants::mesh();
        let p = EstimatorProfile::mesh();
        assert!(single_level_schedule(0.0, &p, &c).is_err());
        assert!(single_level_schedule(-1.0, &p, &c).is_err());
        assert!(multilevel_schedule(0.0, &p, &c).is_err());
        let bad = ScheduleConstants { theta: 1.0, ..c };
        assert!(multilevel_schedule(0.5, &p, &bad).is_err());
    }
}
