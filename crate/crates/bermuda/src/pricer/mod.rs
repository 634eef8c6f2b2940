//! Low-biased pricing: the stopping rule induced by a trained estimator, the
//! single-level Monte Carlo estimate and the multilevel estimate over
//! approximation levels.

mod multilevel;
mod single;

pub use multilevel::{
    correction_samples, correction_samples_with_control, price_multilevel, price_multilevel_cv,
    train_coupled,
    train_coupled_with_control, CoupledEstimators,
    CouplingMode, LevelPair, LevelStats, MultilevelEstimate,
};
pub use single::{
    estimate_bias_curve, estimate_bias_curve_cv, path_payoffs, price_single_level,
    price_single_level_cv,
    stopped_control_values, stopped_payoffs, stopping_time, BiasCurve, BiasPoint, PriceEstimate,
};
