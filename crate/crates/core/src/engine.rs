//! The quantized decentralized gradient iteration.
//!
//! Every round each agent broadcasts one quantized copy `z_j = Q(x_j)` of its
//! state, shared by all of its neighbours, and updates
//!
//! ```text
//! x_i <- (1 - eps) x_i + eps (w_ii s_i + sum_{j != i} w_ij z_j) - alpha eps grad f_i(x_i)
//! ```
//!
//! where the self term `s_i` is the unquantized `x_i` by default, or `z_i`
//! when `quantize_self` is set (the fully vectorized `W z` form).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QdgdError, Result};
use crate::graph::MixingMatrix;
use crate::problem::ProblemInstance;
use crate::quantizer::QuantizerSpec;
use crate::rng::{self, SimRng};
use crate::scheduler::{Phase, Schedule, Scheduler};

/// Any iterate entry above this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Agent iterates, one row per agent, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStates {
    num_agents: usize,
    dim: usize,
    data: Vec<f64>,
    /// Iteration counter.
    pub k: usize,
}

impl AgentStates {
    pub fn zeros(num_agents: usize, dim: usize) -> Self {
        Self { num_agents, dim, data: vec![0.0; num_agents * dim], k: 0 }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_agents = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if num_agents == 0 || dim == 0 {
            return Err(QdgdError::InvalidInput("agent states must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(num_agents * dim);
        for r in rows {
            if r.len() != dim {
                return Err(QdgdError::DimensionMismatch { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { num_agents, dim, data, k: 0 })
    }

    /// Every agent starts at the same point.
    pub fn broadcast(num_agents: usize, x: &[f64]) -> Self {
        let data = (0..num_agents).flat_map(|_| x.iter().copied()).collect();
        Self { num_agents, dim: x.len(), data, k: 0 }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.num_agents {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.num_agents as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    /// `(1/N) sum_i ||x_i - x*||`, `||xbar - x*||^2` over the stacked
    /// `N x n` matrix (that is `N ||xbar - x*||^2`), and `||x - xbar||^2`.
    pub fn errors(&self, x_star: &[f64]) -> (f64, f64, f64) {
        let mean = self.mean();
        let n_agents = self.num_agents as f64;
        let mut mean_err = 0.0;
        let mut consensus_sq = 0.0;
        for i in 0..self.num_agents {
            let row = self.row(i);
            let mut d_opt = 0.0;
            for c in 0..self.dim {
                let d = row[c] - x_star[c];
                d_opt += d * d;
                let e = row[c] - mean[c];
                consensus_sq += e * e;
            }
            mean_err += d_opt.sqrt();
        }
        let opt_sq = n_agents * mean.iter().zip(x_star).map(|(m, s)| (m - s) * (m - s)).sum::<f64>();
        (mean_err / n_agents, opt_sq, consensus_sq)
    }
}

/// Per-iteration record of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iter: usize,
    /// `(1/N) sum_i ||x_i(k) - x*||`.
    pub mean_err: f64,
    /// Stacked `||xbar(k) - x*||^2`, a sample of `A_k`.
    pub opt_sq: f64,
    /// `||x(k) - xbar(k)||^2`, a sample of `B_k`.
    pub consensus_sq: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub phase: Phase,
}

/// Preallocated buffers and neighbour lists for repeated steps.
struct Stepper<'a> {
    problem: &'a ProblemInstance,
    quant: &'a QuantizerSpec,
    quantize_self: bool,
    self_weight: Vec<f64>,
    neighbours: Vec<Vec<(usize, f64)>>,
    z: Vec<f64>,
    grad: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(
        mixing: &MixingMatrix,
        problem: &'a ProblemInstance,
        quant: &'a QuantizerSpec,
        quantize_self: bool,
    ) -> Result<Self> {
        let n_agents = problem.num_agents();
        let dim = problem.dim();
        if mixing.num_nodes() != n_agents {
            return Err(QdgdError::DimensionMismatch { expected: n_agents, got: mixing.num_nodes() });
        }
        if quant.dim() != dim {
            return Err(QdgdError::DimensionMismatch { expected: dim, got: quant.dim() });
        }
        let w = mixing.weights();
        let self_weight = (0..n_agents).map(|i| w[(i, i)]).collect();
        let neighbours = (0..n_agents)
            .map(|i| (0..n_agents).filter(|&j| j != i && w[(i, j)] != 0.0).map(|j| (j, w[(i, j)])).collect())
            .collect();
        Ok(Self {
            problem,
            quant,
            quantize_self,
            self_weight,
            neighbours,
            z: vec![0.0; n_agents * dim],
            grad: vec![0.0; dim],
            next: vec![0.0; n_agents * dim],
        })
    }

    fn step(&mut self, state: &mut AgentStates, alpha: f64, epsilon: f64, rng: &mut SimRng) -> Result<()> {
        let dim = state.dim;
        let n_agents = state.num_agents;
        if n_agents != self.problem.num_agents() || dim != self.problem.dim() {
            return Err(QdgdError::DimensionMismatch {
                expected: self.problem.num_agents() * self.problem.dim(),
                got: n_agents * dim,
            });
        }
        for j in 0..n_agents {
            let range = j * dim..(j + 1) * dim;
            self.quant.quantize_into(&state.data[range.clone()], &mut self.z[range], rng)?;
        }
        let keep = 1.0 - epsilon;
        let grad_step = alpha * epsilon;
        for i in 0..n_agents {
            let x_i = &state.data[i * dim..(i + 1) * dim];
            self.problem.costs()[i].gradient_into(x_i, &mut self.grad)?;
            let own = if self.quantize_self { &self.z[i * dim..(i + 1) * dim] } else { x_i };
            let out = &mut self.next[i * dim..(i + 1) * dim];
            let w_ii = self.self_weight[i];
            for c in 0..dim {
                out[c] = w_ii * own[c];
            }
            for &(j, w_ij) in &self.neighbours[i] {
                let z_j = &self.z[j * dim..(j + 1) * dim];
                for c in 0..dim {
                    out[c] += w_ij * z_j[c];
                }
            }
            for c in 0..dim {
                out[c] = keep * x_i[c] + epsilon * out[c] - grad_step * self.grad[c];
            }
        }
        std::mem::swap(&mut state.data, &mut self.next);
        state.k += 1;
        if state.data.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(QdgdError::DivergenceDetected { iter: state.k });
        }
        Ok(())
    }
}

/// One round of the iteration; returns the new states.
#[allow(clippy::too_many_arguments)]
pub fn qdgd_step(
    state: &AgentStates,
    mixing: &MixingMatrix,
    problem: &ProblemInstance,
    quant: &QuantizerSpec,
    alpha: f64,
    epsilon: f64,
    quantize_self: bool,
    rng: &mut SimRng,
) -> Result<AgentStates> {
    if !(alpha > 0.0) || !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(QdgdError::InvalidInput(format!(
            "need alpha > 0 and 0 < epsilon <= 1, got alpha = {alpha}, epsilon = {epsilon}"
        )));
    }
    let mut stepper = Stepper::new(mixing, problem, quant, quantize_self)?;
    let mut next = state.clone();
    stepper.step(&mut next, alpha, epsilon, rng)?;
    Ok(next)
}

fn check_init(init: &AgentStates, problem: &ProblemInstance) -> Result<()> {
    if init.num_agents != problem.num_agents() {
        return Err(QdgdError::DimensionMismatch { expected: problem.num_agents(), got: init.num_agents });
    }
    if init.dim != problem.dim() {
        return Err(QdgdError::DimensionMismatch { expected: problem.dim(), got: init.dim });
    }
    Ok(())
}

/// Runs `iterations` rounds from `init` and returns `iterations + 1` records,
/// one per `k = 0..=iterations`. The stepsizes in record `k` are the ones
/// in force at iteration `k`.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    problem: &ProblemInstance,
    mixing: &MixingMatrix,
    quant: &QuantizerSpec,
    schedule: &Schedule,
    iterations: usize,
    init: &AgentStates,
    quantize_self: bool,
    rng: &mut SimRng,
) -> Result<Vec<StepMetrics>> {
    check_init(init, problem)?;
    let mut scheduler = Scheduler::new(*schedule)?;
    let mut stepper = Stepper::new(mixing, problem, quant, quantize_self)?;
    let x_star = problem.x_star().as_slice();
    let mut state = init.clone();
    state.k = 0;
    let mut records = Vec::with_capacity(iterations + 1);
    for k in 0..=iterations {
        let steps = scheduler.stepsizes_at(k)?;
        let (mean_err, opt_sq, consensus_sq) = state.errors(x_star);
        records.push(StepMetrics {
            iter: k,
            mean_err,
            opt_sq,
            consensus_sq,
            alpha: steps.alpha,
            epsilon: steps.epsilon,
            phase: steps.phase,
        });
        if k < iterations {
            if !(steps.epsilon <= 1.0) {
                return Err(QdgdError::InvalidInput(format!("epsilon = {} exceeds 1 at k = {k}", steps.epsilon)));
            }
            stepper.step(&mut state, steps.alpha, steps.epsilon, rng)?;
        }
    }
    Ok(records)
}

/// Trial-averaged metrics at one iteration, with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub iter: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub phase: Phase,
    pub mean_err: f64,
    pub opt_sq: f64,
    pub consensus_sq: f64,
    pub se_mean_err: f64,
    pub se_opt_sq: f64,
    pub se_consensus_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub trials: usize,
    pub rows: Vec<AveragedMetrics>,
}

/// Welford accumulator; folding identical values leaves the variance exactly 0.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, count: usize, v: f64) {
        let delta = v - self.mean;
        self.mean += delta / count as f64;
        self.m2 += delta * (v - self.mean);
    }

    /// Standard error of the mean; 0 for a single sample.
    fn std_err(&self, count: usize) -> f64 {
        if count < 2 {
            return 0.0;
        }
        let var = (self.m2 / (count - 1) as f64).max(0.0);
        (var / count as f64).sqrt()
    }
}

/// Everything that defines one Monte Carlo experiment.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloSpec<'a> {
    pub problem: &'a ProblemInstance,
    pub mixing: &'a MixingMatrix,
    pub quant: &'a QuantizerSpec,
    pub schedule: &'a Schedule,
    pub iterations: usize,
    pub init: &'a AgentStates,
    pub quantize_self: bool,
}

/// Stream seed for trial `trial` of a run seeded with `base_seed`.
pub fn trial_rng(base_seed: u64, trial: usize) -> SimRng {
    rng::substream(base_seed, trial as u64)
}

/// Averages `trials` independent trajectories. Trial `t` uses substream `t`
/// of `base_seed`; trials may run in parallel but are merged in index order.
pub fn monte_carlo(spec: &MonteCarloSpec<'_>, trials: usize, base_seed: u64) -> Result<MonteCarloResult> {
    if trials == 0 {
        return Err(QdgdError::InvalidInput("need at least one trial".into()));
    }
    let rows_len = spec.iterations + 1;
    let mut acc = vec![[Running::default(); 3]; rows_len];
    let mut first: Option<Vec<StepMetrics>> = None;
    let chunk = rayon::current_num_threads().max(1);
    let mut done = 0;
    while done < trials {
        let upto = (done + chunk).min(trials);
        let batch: Vec<Result<Vec<StepMetrics>>> = (done..upto)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(base_seed, t);
                run_trajectory(
                    spec.problem,
                    spec.mixing,
                    spec.quant,
                    spec.schedule,
                    spec.iterations,
                    spec.init,
                    spec.quantize_self,
                    &mut rng,
                )
                .map_err(|e| QdgdError::Trial { trial: t, source: Box::new(e) })
            })
            .collect();
        for (offset, result) in batch.into_iter().enumerate() {
            let records = result?;
            let count = done + offset + 1;
            for (a, r) in acc.iter_mut().zip(&records) {
                a[0].push(count, r.mean_err);
                a[1].push(count, r.opt_sq);
                a[2].push(count, r.consensus_sq);
            }
            if first.is_none() {
                first = Some(records);
            }
        }
        done = upto;
    }
    let first = first.expect("at least one trial ran");
    let rows = first
        .iter()
        .zip(&acc)
        .map(|(r, a)| AveragedMetrics {
            iter: r.iter,
            alpha: r.alpha,
            epsilon: r.epsilon,
            phase: r.phase,
            mean_err: a[0].mean,
            opt_sq: a[1].mean,
            consensus_sq: a[2].mean,
            se_mean_err: a[0].std_err(trials),
            se_opt_sq: a[1].std_err(trials),
            se_consensus_sq: a[2].std_err(trials),
        })
        .collect();
    Ok(MonteCarloResult { trials, rows })
}
