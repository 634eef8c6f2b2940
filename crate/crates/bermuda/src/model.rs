//! Market model: exact GBM simulation of the chain `Z_j = X_{t_j}` together
//! with its lognormal transition density, and the path-set container shared
//! by all estimators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Error;
use crate::rng::StreamKey;

/// GBM market parameters for `d` independent assets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    pub r: f64,
    pub delta: f64,
    pub sigma: f64,
    pub x0: Vec<f64>,
}

impl ModelParams {
    pub fn new(d: usize, r: f64, delta: f64, sigma: f64, x0: Vec<f64>) -> Result<Self, Error> {
        if d == 0 {
            return Err(Error::InvalidParams("d must be >= 1".into()));
        }
        if sigma < 0.0 {
            return Err(Error::InvalidParams("sigma must be >= 0".into()));
        }
        if x0.len() != d {
            return Err(Error::InvalidParams(format!(
                "x0 has length {}, expected d = {}",
                x0.len(),
                d
            )));
        }
        if x0.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(Error::InvalidParams("x0 components must be positive".into()));
        }
        Ok(ModelParams { d, r, delta, sigma, x0 })
    }

    /// The benchmark parameter set: five independent assets, at the money.
    pub fn benchmark() -> Self {
        ModelParams::new(5, 0.05, 0.1, 0.2, vec![100.0; 5]).unwrap()
    }
}

/// Exercise dates `t_0 = 0 < t_1 < ... < t_J = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, Error> {
        if times.len() < 2 {
            return Err(Error::InvalidParams("time grid needs at least two dates".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidParams("time grid must start at 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams("time grid must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    /// Equidistant grid `t_j = j T / J`.
    pub fn equidistant(maturity: f64, num_exercise: usize) -> Result<Self, Error> {
        if num_exercise == 0 || maturity <= 0.0 {
            return Err(Error::InvalidParams("need J >= 1 and T > 0".into()));
        }
        let times = (0..=num_exercise)
            .map(|j| maturity * j as f64 / num_exercise as f64)
            .collect();
        TimeGrid::new(times)
    }

    /// Number of exercise dates after time zero (the paper's script-J).
    pub fn last_index(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, j: usize) -> f64 {
        self.times[j]
    }

    pub fn maturity(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Elapsed time `t_j - t_{j-1}` for `1 <= j <= J`.
    pub fn dt(&self, j: usize) -> f64 {
        self.times[j] - self.times[j - 1]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// A set of simulated trajectories, all starting from the same point.
///
/// States are stored date-major so that the slice of all trajectories at a
/// fixed date (what mesh/local evaluation iterates over) is contiguous.
#[derive(Debug, Clone)]
pub struct PathSet {
    count: usize,
    dim: usize,
    num_dates: usize,
    /// layout: `states[(j * count + i) * dim + c]`
    states: Vec<f64>,
    pub seed_info: String,
}

/// Equality of the simulated data; the provenance label is ignored.
impl PartialEq for PathSet {
    fn eq(&self, other: &Self) -> bool {
        self.count == other.count
            && self.dim == other.dim
            && self.num_dates == other.num_dates
            && self.states == other.states
    }
}

impl PathSet {
    pub fn with_states(
        count: usize,
        dim: usize,
        num_dates: usize,
        states: Vec<f64>,
        seed_info: String,
    ) -> Self {
        assert_eq!(states.len(), count * dim * num_dates);
        PathSet { count, dim, num_dates, states, seed_info }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored dates (J + 1).
    pub fn num_dates(&self) -> usize {
        self.num_dates
    }

    /// State of trajectory `i` at date `j`.
    pub fn state(&self, i: usize, j: usize) -> &[f64] {
        let off = (j * self.count + i) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// All states at date `j`, trajectory-major.
    pub fn date_slice(&self, j: usize) -> &[f64] {
        let off = j * self.count * self.dim;
        &self.states[off..off + self.count * self.dim]
    }

    /// View of one trajectory.
    pub fn path(&self, i: usize) -> PathView<'_> {
        PathView { set: self, index: i }
    }

    /// The first `k` trajectories as a new set (used for level coupling).
    pub fn prefix(&self, k: usize) -> PathSet {
        assert!(k <= self.count);
        let mut states = Vec::with_capacity(k * self.dim * self.num_dates);
        for j in 0..self.num_dates {
            let date = self.date_slice(j);
            states.extend_from_slice(&date[..k * self.dim]);
        }
        PathSet {
            count: k,
            dim: self.dim,
            num_dates: self.num_dates,
            states,
            seed_info: format!("{}[..{}]", self.seed_info, k),
        }
    }
}

/// Borrowed view of a single trajectory inside a [`PathSet`].
#[derive(Clone, Copy)]
pub struct PathView<'a> {
    set: &'a PathSet,
    index: usize,
}

impl<'a> PathView<'a> {
    pub fn state(&self, j: usize) -> &'a [f64] {
        self.set.state(self.index, j)
    }

    pub fn num_dates(&self) -> usize {
        self.set.num_dates()
    }
}

/// A Markov chain that can be simulated forward and whose one-step
/// transition weight (density or pmf) is analytically known.
///
/// Implemented by the GBM benchmark model and by the finite-state oracle
/// chains used in tests.
pub trait MarkovModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of dates including time zero (J + 1).
    fn num_dates(&self) -> usize;

    fn initial_state(&self) -> &[f64];

    /// Sample `Z_{j+1}` given `Z_j = x`, writing into `out`.
    fn sample_step(&self, j: usize, x: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]);

    /// Log transition weight of `Z_{j+1} = y` given `Z_j = x`.
    /// Returns negative infinity where the transition is impossible.
    fn log_transition(&self, j: usize, x: &[f64], y: &[f64]) -> f64;

    /// Simulate `count` independent trajectories, all starting from the
    /// initial state. Deterministic given the stream key, independent of
    /// thread count.
    fn simulate_paths(&self, count: usize, stream: StreamKey) -> PathSet {
        assert!(count >= 1, "need at least one trajectory");
        let dim = self.dim();
        let num_dates = self.num_dates();
        // simulate trajectory-major in parallel, then transpose to date-major
        let rows: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream.rng(i as u64);
                let mut row = Vec::with_capacity(num_dates * dim);
                row.extend_from_slice(self.initial_state());
                let mut next = vec![0.0; dim];
                for j in 0..num_dates - 1 {
                    self.sample_step(j, &row[j * dim..(j + 1) * dim], &mut rng, &mut next);
                    row.extend_from_slice(&next);
                }
                row
            })
            .collect();
        let mut states = vec![0.0; count * dim * num_dates];
        for (i, row) in rows.iter().enumerate() {
            for j in 0..num_dates {
                let dst = (j * count + i) * dim;
                states[dst..dst + dim].copy_from_slice(&row[j * dim..(j + 1) * dim]);
            }
        }
        PathSet::with_states(count, dim, num_dates, states, format!("{:?}", stream))
    }
}

/// The GBM chain observed at the exercise dates.
#[derive(Debug, Clone)]
pub struct GbmModel {
    pub params: ModelParams,
    pub grid: TimeGrid,
}

impl GbmModel {
    pub fn new(params: ModelParams, grid: TimeGrid) -> Self {
        GbmModel { params, grid }
    }

    /// One exact GBM step over `dt` driven by the standard normal vector `xi`.
    pub fn gbm_step(x: &[f64], dt: f64, params: &ModelParams, xi: &[f64]) -> Result<Vec<f64>, Error> {
        if dt <= 0.0 {
            return Err(Error::InvalidParams("dt must be positive".into()));
        }
        if x.len() != params.d || xi.len() != params.d {
            return Err(Error::InvalidParams(format!(
                "dimension mismatch: x has {}, xi has {}, d = {}",
                x.len(),
                xi.len(),
                params.d
            )));
        }
        if x.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidParams("state components must be positive".into()));
        }
        let drift = (params.r - params.delta - 0.5 * params.sigma * params.sigma) * dt;
        let vol = params.sigma * dt.sqrt();
        Ok(x.iter()
            .zip(xi)
            .map(|(&xc, &z)| xc * (drift + vol * z).exp())
            .collect())
    }

    /// Log density of `Z_j = y` given `Z_{j-1} = x` for `1 <= j <= J`,
    /// i.e. the product of univariate lognormal transition densities over
    /// the elapsed time `t_j - t_{j-1}`.
    pub fn log_transition_density(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        assert!(j >= 1 && j <= self.grid.last_index(), "date index out of range");
        let dt = self.grid.dt(j);
        let p = &self.params;
        let s = p.sigma * dt.sqrt();
        let m = (p.r - p.delta - 0.5 * p.sigma * p.sigma) * dt;
        let mut acc = 0.0;
        for c in 0..p.d {
            debug_assert!(x[c] > 0.0 && y[c] > 0.0, "states must be positive");
            let z = ((y[c] / x[c]).ln() - m) / s;
            // standard lognormal density in y (the 1/y prefactor, not x/y)
            acc += -0.5 * z * z - (y[c] * s * (2.0 * std::f64::consts::PI).sqrt()).ln();
        }
        acc
    }

    /// Transition density `p_j(x, y)` of `Z_j` given `Z_{j-1} = x`.
    pub fn transition_density(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        self.log_transition_density(j, x, y).exp()
    }
}

impl MarkovModel for GbmModel {
    fn dim(&self) -> usize {
        self.params.d
    }

    fn num_dates(&self) -> usize {
        self.grid.last_index() + 1
    }

    fn initial_state(&self) -> &[f64] {
        &self.params.x0
    }

    fn sample_step(&self, j: usize, x: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let dt = self.grid.dt(j + 1);
        let p = &self.params;
        let drift = (p.r - p.delta - 0.5 * p.sigma * p.sigma) * dt;
        let vol = p.sigma * dt.sqrt();
        for c in 0..p.d {
            let z: f64 = rng.sample(StandardNormal);
            out[c] = x[c] * (drift + vol * z).exp();
        }
    }

    fn log_transition(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        self.log_transition_density(j + 1, x, y)
    }
}
