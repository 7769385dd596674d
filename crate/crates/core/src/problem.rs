//! Distributed least-squares problems.
//!
//! Agent `i` holds `f_i(x) = scale * ||A_i x - y_i||^2` and the network
//! minimizes `f = sum_i f_i`. With `scale = 1/N` the aggregate is the mean
//! squared residual `(1/N) sum_i ||A_i x - y_i||^2`, and every constant below
//! (`L`, `mu`, ...) is computed for that scaled family.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QdgdError, Result};
use crate::rng;

/// Smallest admissible eigenvalue of the aggregate Hessian.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalCost {
    a: DMatrix<f64>,
    y: DVector<f64>,
    scale: f64,
}

impl LocalCost {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, scale: f64) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(QdgdError::DimensionMismatch { expected: a.nrows(), got: y.len() });
        }
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(QdgdError::InvalidInput("local cost matrix must be non-empty".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(QdgdError::InvalidInput(format!("cost scale must be positive, got {scale}")));
        }
        Ok(Self { a, y, scale })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.a.ncols());
        let mut total = 0.0;
        for r in 0..self.a.nrows() {
            let mut res = -self.y[r];
            for (c, xc) in x.iter().enumerate() {
                res += self.a[(r, c)] * xc;
            }
            total += res * res;
        }
        self.scale * total
    }

    /// `2 scale A^T (A x - y)` written into `out`, without allocating.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        if x.len() != n {
            return Err(QdgdError::DimensionMismatch { expected: n, got: x.len() });
        }
        if out.len() != n {
            return Err(QdgdError::DimensionMismatch { expected: n, got: out.len() });
        }
        out.fill(0.0);
        let two_s = 2.0 * self.scale;
        for r in 0..self.a.nrows() {
            let row = self.a.row(r);
            let mut res = -self.y[r];
            for c in 0..n {
                res += row[c] * x[c];
            }
            let w = two_s * res;
            for c in 0..n {
                out[c] += w * row[c];
            }
        }
        Ok(())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out)?;
        Ok(out)
    }

    /// Hessian `2 scale A^T A`.
    pub fn hessian(&self) -> DMatrix<f64> {
        self.a.tr_mul(&self.a) * (2.0 * self.scale)
    }

    /// Lipschitz constant of the gradient, `2 scale lambda_max(A^T A)`.
    pub fn smoothness(&self) -> f64 {
        symmetric_eigenvalues(self.hessian()).max()
    }
}

/// Gradient of `cost` at `x`.
pub fn local_gradient(cost: &LocalCost, x: &[f64]) -> Result<Vec<f64>> {
    cost.gradient(x)
}

fn symmetric_eigenvalues(m: DMatrix<f64>) -> DVector<f64> {
    nalgebra::SymmetricEigen::new(m).eigenvalues
}

fn check_costs(costs: &[LocalCost]) -> Result<usize> {
    let first = costs
        .first()
        .ok_or_else(|| QdgdError::InvalidInput("problem needs at least one agent".into()))?;
    let n = first.dim();
    for c in costs {
        if c.dim() != n {
            return Err(QdgdError::DimensionMismatch { expected: n, got: c.dim() });
        }
    }
    Ok(n)
}

fn aggregate_hessian(costs: &[LocalCost], n: usize) -> DMatrix<f64> {
    costs.iter().fold(DMatrix::zeros(n, n), |acc, c| acc + c.hessian())
}

/// Sum of local gradients at `x`.
pub fn aggregate_gradient(costs: &[LocalCost], x: &[f64]) -> Result<Vec<f64>> {
    let n = check_costs(costs)?;
    let mut total = vec![0.0; n];
    let mut g = vec![0.0; n];
    for c in costs {
        c.gradient_into(x, &mut g)?;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += gi;
        }
    }
    Ok(total)
}

pub fn aggregate_value(costs: &[LocalCost], x: &[f64]) -> f64 {
    costs.iter().map(|c| c.value(x)).sum()
}

/// Exact minimizer of `sum_i f_i` from the normal equations.
pub fn optimizer(costs: &[LocalCost]) -> Result<DVector<f64>> {
    let n = check_costs(costs)?;
    let hess = aggregate_hessian(costs, n);
    let min_eig = symmetric_eigenvalues(hess.clone()).min();
    if min_eig <= SINGULAR_TOL {
        return Err(QdgdError::SingularProblem { min_eig });
    }
    let rhs = costs
        .iter()
        .fold(DVector::zeros(n), |acc, c| acc + c.a.tr_mul(&c.y) * (2.0 * c.scale));
    let chol = hess
        .clone()
        .cholesky()
        .ok_or(QdgdError::SingularProblem { min_eig })?;
    let mut x = chol.solve(&rhs);
    // One refinement step; the residual is the aggregate gradient.
    let residual = &hess * &x - &rhs;
    x -= chol.solve(&residual);
    Ok(x)
}

/// Constants consumed by the bounds and scheduler modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// `max_i L_i`.
    pub l: f64,
    /// Strong-convexity modulus of `sum_i f_i`.
    pub mu: f64,
    /// `mu L / (mu + L)`.
    pub eta: f64,
    /// `||grad F(x*)||_F / L`, with local gradients stacked row-wise.
    pub c: f64,
}

pub fn smoothness_constants(costs: &[LocalCost], x_star: &[f64]) -> Result<SmoothnessConstants> {
    let n = check_costs(costs)?;
    if x_star.len() != n {
        return Err(QdgdError::DimensionMismatch { expected: n, got: x_star.len() });
    }
    let l = costs.iter().map(LocalCost::smoothness).fold(0.0, f64::max);
    let mu = symmetric_eigenvalues(aggregate_hessian(costs, n)).min();
    if mu <= SINGULAR_TOL {
        return Err(QdgdError::SingularProblem { min_eig: mu });
    }
    let mut stacked_sq = 0.0;
    for cost in costs {
        stacked_sq += cost.gradient(x_star)?.iter().map(|g| g * g).sum::<f64>();
    }
    Ok(SmoothnessConstants { l, mu, eta: mu * l / (mu + l), c: stacked_sq.sqrt() / l })
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    costs: Vec<LocalCost>,
    x_star: DVector<f64>,
    constants: SmoothnessConstants,
}

impl ProblemInstance {
    pub fn from_costs(costs: Vec<LocalCost>) -> Result<Self> {
        let x_star = optimizer(&costs)?;
        let constants = smoothness_constants(&costs, x_star.as_slice())?;
        Ok(Self { costs, x_star, constants })
    }

    pub fn costs(&self) -> &[LocalCost] {
        &self.costs
    }

    pub fn num_agents(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    pub fn constants(&self) -> SmoothnessConstants {
        self.constants
    }

    pub fn l(&self) -> f64 {
        self.constants.l
    }

    pub fn mu(&self) -> f64 {
        self.constants.mu
    }

    pub fn eta(&self) -> f64 {
        self.constants.eta
    }

    /// `||grad F(x*)|| / L`.
    pub fn c(&self) -> f64 {
        self.constants.c
    }
}

/// Weight placed on each generated local cost `||A_i x - y_i||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostScale {
    /// `f_i = ||A_i x - y_i||^2`, so the averaged cost `(1/N) sum_i f_i` is
    /// the least-squares objective.
    #[default]
    Unit,
    /// `f_i = (1/N) ||A_i x - y_i||^2`, so the plain sum is the objective.
    InverseN,
}

impl CostScale {
    pub fn factor(self, num_agents: usize) -> f64 {
        match self {
            CostScale::Unit => 1.0,
            CostScale::InverseN => 1.0 / num_agents as f64,
        }
    }
}

/// Draws `N` agents with `m x n` standard normal `A_i` and standard normal
/// `y_i`, with unit cost scale. Per agent, the entries of `A_i` are drawn in
/// row-major order, followed by `y_i`.
pub fn generate_least_squares(num_agents: usize, m: usize, n: usize, seed: u64) -> Result<ProblemInstance> {
    generate_least_squares_scaled(num_agents, m, n, seed, CostScale::Unit)
}

/// [`generate_least_squares`] with an explicit cost scale. The random draws
/// do not depend on the scale.
pub fn generate_least_squares_scaled(
    num_agents: usize,
    m: usize,
    n: usize,
    seed: u64,
    cost_scale: CostScale,
) -> Result<ProblemInstance> {
    if num_agents == 0 || m == 0 || n == 0 {
        return Err(QdgdError::InvalidInput("N, m and n must be positive".into()));
    }
    if num_agents * m < n {
        return Err(QdgdError::InvalidInput(format!(
            "N*m = {} < n = {n}: aggregate Hessian would be singular",
            num_agents * m
        )));
    }
    let mut rng = rng::seeded(seed);
    let scale = cost_scale.factor(num_agents);
    let mut costs = Vec::with_capacity(num_agents);
    for _ in 0..num_agents {
        let entries: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
        let a = DMatrix::from_row_slice(m, n, &entries);
        let y = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        costs.push(LocalCost::new(a, y, scale)?);
    }
    ProblemInstance::from_costs(costs)
}

/// Structured record of an instance: matrices row-major plus derived constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub num_agents: usize,
    pub m: Vec<usize>,
    pub n: usize,
    pub scale: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub x_star: Vec<f64>,
    pub constants: SmoothnessConstants,
}

impl ProblemRecord {
    pub fn new(problem: &ProblemInstance) -> Self {
        let costs = problem.costs();
        Self {
            num_agents: costs.len(),
            m: costs.iter().map(|c| c.a.nrows()).collect(),
            n: problem.dim(),
            scale: costs.iter().map(|c| c.scale).collect(),
            a: costs
                .iter()
                .map(|c| (0..c.a.nrows()).flat_map(|r| (0..c.a.ncols()).map(move |k| c.a[(r, k)])).collect())
                .collect(),
            y: costs.iter().map(|c| c.y.iter().copied().collect()).collect(),
            x_star: problem.x_star.iter().copied().collect(),
            constants: problem.constants,
        }
    }
}
