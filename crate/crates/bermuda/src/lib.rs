//! Bermudan option pricing by simulation: stochastic mesh, local and global
//! regression estimators of the continuation value, a low-biased single-level
//! Monte Carlo pricer, and a multilevel estimator that couples levels through
//! the number of training trajectories. Includes the closed-form budget
//! schedules, cost accounting, a European max-call control variate and an
//! experiment harness.

pub mod config;
pub mod cost;
pub mod cv;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod payoff;
pub mod pricer;
pub mod rng;
pub mod scheduler;
pub mod stats;

pub use error::Error;
