use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("quadrature did not reach requested accuracy (achieved {achieved:e})")]
    QuadratureAccuracy { achieved: f64 },
    #[error("empty testing set")]
    EmptyTestingSet,
    #[error("io error: {0}")]
    Io(String),
}
