//! Finite-state Markov chains with exact dynamic-programming solutions.
//! These serve as test oracles: the chains can be simulated like any other
//! model (so every estimator and pricer runs on them unchanged) while their
//! true value and continuation tables are computed exactly by backward
//! recursion.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::estimators::{Continuation, EstimatorProfile};
use crate::model::MarkovModel;
use crate::payoff::Payoff;

/// A time-inhomogeneous finite-state chain on scalar state values.
///
/// Date `j` has its own state list; `trans[j]` is the row-stochastic matrix
/// from date-`j` states to date-`j+1` states. All trajectories start in
/// state 0 of date 0.
#[derive(Debug, Clone)]
pub struct DiscreteChain {
    /// state values per date, strictly increasing within a date
    pub states: Vec<Vec<f64>>,
    /// trans[j][s] = distribution over date j+1 states
    pub trans: Vec<Vec<Vec<f64>>>,
    initial: [f64; 1],
}

impl DiscreteChain {
    pub fn new(states: Vec<Vec<f64>>, trans: Vec<Vec<Vec<f64>>>) -> Self {
        assert!(states.len() >= 2);
        assert_eq!(trans.len(), states.len() - 1);
        assert_eq!(states[0].len(), 1, "all trajectories start from one point");
        for j in 0..trans.len() {
            assert_eq!(trans[j].len(), states[j].len());
            for row in &trans[j] {
                assert_eq!(row.len(), states[j + 1].len());
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "row not stochastic: sum {total}");
                assert!(row.iter().all(|&p| p >= 0.0));
            }
            // states must be distinct so value -> index lookup is unambiguous
            for w in states[j + 1].windows(2) {
                assert!(w[1] > w[0], "state values must be strictly increasing");
            }
        }
        let initial = [states[0][0]];
        DiscreteChain { states, trans, initial }
    }

    /// Index of the date-`j` state with value `v`.
    pub fn state_index(&self, j: usize, v: f64) -> Option<usize> {
        let vals = &self.states[j];
        vals.binary_search_by(|x| x.partial_cmp(&v).unwrap()).ok()
    }

    /// Exact backward recursion: returns per-date tables of `C_j*` and `V_j*`
    /// and the time-zero value.
    pub fn dp_solve(&self, payoff: &dyn Payoff) -> DpSolution {
        let last = self.states.len() - 1;
        let mut cont: Vec<Vec<f64>> = self.states.iter().map(|s| vec![0.0; s.len()]).collect();
        let mut value: Vec<Vec<f64>> = cont.clone();
        for (s, &v) in self.states[last].iter().enumerate() {
            value[last][s] = payoff.value(last, &[v]);
        }
        for j in (0..last).rev() {
            for s in 0..self.states[j].len() {
                let c: f64 = self.trans[j][s]
                    .iter()
                    .zip(&value[j + 1])
                    .map(|(&p, &v)| p * v)
                    .sum();
                cont[j][s] = c;
                value[j][s] = payoff.value(j, &[self.states[j][s]]).max(c);
            }
        }
        let root = value[0][0];
        DpSolution { cont, value, price: root }
    }
}

impl MarkovModel for DiscreteChain {
    fn dim(&self) -> usize {
        1
    }

    fn num_dates(&self) -> usize {
        self.states.len()
    }

    fn initial_state(&self) -> &[f64] {
        &self.initial
    }

    fn sample_step(&self, j: usize, x: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let s = self.state_index(j, x[0]).expect("state not on the chain");
        let u: f64 = rng.gen();
        let row = &self.trans[j][s];
        let mut acc = 0.0;
        let mut pick = row.len() - 1;
        for (t, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = t;
                break;
            }
        }
        out[0] = self.states[j + 1][pick];
    }

    fn log_transition(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let s = match self.state_index(j, x[0]) {
            Some(s) => s,
            None => return f64::NEG_INFINITY,
        };
        let t = match self.state_index(j + 1, y[0]) {
            Some(t) => t,
            None => return f64::NEG_INFINITY,
        };
        let p = self.trans[j][s][t];
        if p > 0.0 {
            p.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Exact DP tables for a [`DiscreteChain`].
#[derive(Debug, Clone)]
pub struct DpSolution {
    /// `cont[j][s] = C_j*(state s)`, zero at the last date
    pub cont: Vec<Vec<f64>>,
    /// `value[j][s] = V_j*(state s)`
    pub value: Vec<Vec<f64>>,
    pub price: f64,
}

/// The exact continuation values of a chain wrapped as a trained estimator,
/// for oracle short-circuit tests.
pub struct OracleContinuation {
    chain: Arc<DiscreteChain>,
    solution: DpSolution,
    eval_ops: AtomicU64,
}

impl OracleContinuation {
    pub fn new(chain: Arc<DiscreteChain>, payoff: &dyn Payoff) -> Self {
        let solution = chain.dp_solve(payoff);
        OracleContinuation { chain, solution, eval_ops: AtomicU64::new(0) }
    }

    pub fn price(&self) -> f64 {
        self.solution.price
    }
}

impl Continuation for OracleContinuation {
    fn value(&self, j: usize, z: &[f64]) -> f64 {
        self.eval_ops.fetch_add(1, Ordering::Relaxed);
        if j == self.chain.states.len() - 1 {
            return 0.0;
        }
        let s = self.chain.state_index(j, z[0]).expect("state not on the chain");
        self.solution.cont[j][s]
    }

    fn training_size(&self) -> usize {
        1
    }

    fn num_dates(&self) -> usize {
        self.chain.states.len()
    }

    fn profile(&self) -> EstimatorProfile {
        EstimatorProfile::mesh()
    }

    fn measured_train_ops(&self) -> u64 {
        0
    }

    fn measured_eval_ops(&self) -> u64 {
        self.eval_ops.load(Ordering::Relaxed)
    }
}

/// Table-driven payoff for chain fixtures: `values[j][s]`, already discounted.
pub struct TablePayoff {
    pub chain: Arc<DiscreteChain>,
    pub values: Vec<Vec<f64>>,
}

impl Payoff for TablePayoff {
    fn value(&self, j: usize, z: &[f64]) -> f64 {
        let s = self.chain.state_index(j, z[0]).expect("state not on the chain");
        self.values[j][s]
    }

    fn num_dates(&self) -> usize {
        self.chain.states.len()
    }
}

/// Binomial coefficient as f64; fine for the small lattices used here.
fn binom(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// 1-d recombining binomial tree mapped onto the Bermudan grid: `steps`
/// lattice steps between consecutive exercise dates, CRR up/down factors
/// matched to the GBM volatility, risk-neutral up probability.
///
/// The transition between exercise dates is the `steps`-fold binomial
/// aggregate, so the chain has an analytically known pmf for the mesh
/// weights while staying exactly solvable by DP.
pub fn binomial_fixture(
    x0: f64,
    r: f64,
    delta: f64,
    sigma: f64,
    maturity: f64,
    num_exercise: usize,
    steps: usize,
) -> DiscreteChain {
    let h = maturity / num_exercise as f64 / steps as f64;
    let u = (sigma * h.sqrt()).exp();
    let d = 1.0 / u;
    let growth = ((r - delta) * h).exp();
    let p = (growth - d) / (u - d);
    assert!(p > 0.0 && p < 1.0, "lattice step too coarse for these parameters");

    // date j has steps*j + 1 states: x0 u^i d^{steps*j - i}
    let states: Vec<Vec<f64>> = (0..=num_exercise)
        .map(|j| {
            let n = steps * j;
            (0..=n).map(|i| x0 * u.powi(i as i32) * d.powi((n - i) as i32)).collect()
        })
        .collect();

    // steps-fold binomial pmf for the per-interval transition
    let pmf: Vec<f64> = (0..=steps)
        .map(|w| binom(steps, w) * p.powi(w as i32) * (1.0 - p).powi((steps - w) as i32))
        .collect();

    let trans: Vec<Vec<Vec<f64>>> = (0..num_exercise)
        .map(|j| {
            let n_from = steps * j + 1;
            let n_to = steps * (j + 1) + 1;
            (0..n_from)
                .map(|s| {
                    let mut row = vec![0.0; n_to];
                    for (w, &q) in pmf.iter().enumerate() {
                        row[s + w] = q;
                    }
                    // guard against accumulated rounding in the pmf
                    let total: f64 = row.iter().sum();
                    for v in &mut row {
                        *v /= total;
                    }
                    row
                })
                .collect()
        })
        .collect();

    DiscreteChain::new(states, trans)
}

/// Random `width`-state chain with `num_exercise` dates, row-stochastic
/// transitions and a single start state; used with random table payoffs.
pub fn random_chain_fixture(width: usize, num_exercise: usize, seed: u64) -> DiscreteChain {
    use crate::rng::StreamKey;
    let mut rng = StreamKey::new(seed).rng(0);
    let mut states: Vec<Vec<f64>> = vec![vec![100.0]];
    for _ in 1..=num_exercise {
        let mut vals: Vec<f64> = (0..width).map(|_| 50.0 + 100.0 * rng.gen::<f64>()).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        states.push(vals);
    }
    let trans: Vec<Vec<Vec<f64>>> = (0..num_exercise)
        .map(|j| {
            (0..states[j].len())
                .map(|_| {
                    let mut row: Vec<f64> =
                        (0..states[j + 1].len()).map(|_| 0.05 + rng.gen::<f64>()).collect();
                    let total: f64 = row.iter().sum();
                    for v in &mut row {
                        *v /= total;
                    }
                    row
                })
                .collect()
        })
        .collect();
    DiscreteChain::new(states, trans)
}

/// Value of an explicit exercise policy (a set of stopping states per date)
/// by exact forward propagation of the state distribution. Terminal states
/// always exercise. Used by the exhaustive policy-enumeration oracle.
pub fn policy_value(chain: &DiscreteChain, payoff: &dyn Payoff, exercise: &[Vec<bool>]) -> f64 {
    let last = chain.states.len() - 1;
    assert_eq!(exercise.len(), last);
    let mut dist = vec![1.0]; // at date 0, all mass in state 0
    let mut total = 0.0;
    for j in 0..last {
        let mut next = vec![0.0; chain.states[j + 1].len()];
        for s in 0..chain.states[j].len() {
            if dist[s] == 0.0 {
                continue;
            }
            if exercise[j][s] {
                total += dist[s] * payoff.value(j, &[chain.states[j][s]]);
            } else {
                for (t, &p) in chain.trans[j][s].iter().enumerate() {
                    next[t] += dist[s] * p;
                }
            }
        }
        dist = next;
    }
    for (s, &mass) in dist.iter().enumerate() {
        total += mass * payoff.value(last, &[chain.states[last][s]]);
    }
    total
}

/// Near-exact 1-d Bermudan price under GBM by grid-based backward
/// induction: values live on a dense log-spaced state grid and the
/// continuation integral is a composite-Simpson sum of the value function
/// against the lognormal transition density on the same grid. Truncation at
/// +-12 conditional standard deviations and ~2000 nodes put the result far
/// below Monte Carlo resolution.
pub fn bermudan_1d_quadrature(
    params: &crate::model::ModelParams,
    grid: &crate::model::TimeGrid,
    payoff: &dyn Payoff,
) -> f64 {
    assert_eq!(params.d, 1, "quadrature oracle is one-dimensional");
    let last = grid.last_index();
    let x0 = params.x0[0];
    let dt = grid.dt(1);
    let mu_step = (params.r - params.delta - 0.5 * params.sigma * params.sigma) * dt;
    let s_step = params.sigma * dt.sqrt();
    let s_total = params.sigma * grid.maturity().sqrt();

    // global log-state grid around the unconditional distribution
    let nodes = 2001usize; // odd, for composite Simpson
    let center = x0.ln() + mu_step * last as f64;
    let half_width = 12.0 * s_total;
    let h = 2.0 * half_width / (nodes - 1) as f64;
    let us: Vec<f64> = (0..nodes).map(|i| center - half_width + i as f64 * h).collect();
    let simpson_w = |i: usize| -> f64 {
        if i == 0 || i == nodes - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };

    // V at the last date on the grid
    let mut values: Vec<f64> = us.iter().map(|&u| payoff.value(last, &[u.exp()])).collect();

    // log-density of one step: u' | u ~ Normal(u + mu_step, s_step)
    let cont_at = |u: f64, next: &[f64]| -> f64 {
        let norm = 1.0 / (s_step * (2.0 * std::f64::consts::PI).sqrt());
        let mut acc = 0.0;
        for (i, &ui) in us.iter().enumerate() {
            let zscore = (ui - u - mu_step) / s_step;
            acc += simpson_w(i) * next[i] * norm * (-0.5 * zscore * zscore).exp();
        }
        acc * h / 3.0
    };

    for j in (1..last).rev() {
        let next = values.clone();
        values = us
            .iter()
            .enumerate()
            .map(|(i, &u)| payoff.value(j, &[u.exp()]).max(cont_at(us[i], &next)))
            .collect();
    }
    payoff.value(0, &[x0]).max(cont_at(x0.ln(), &values))
}
