//! Theoretical constants, stepsize feasibility, the closed-form bounds and
//! the error recursion they are derived from.
//!
//! Norms follow the stacked convention: `A_k = ||1 xbar(k) - x*||^2` over
//! the `N x n` matrix (so `N ||xbar - x*||^2` per agent copy),
//! `B_k = ||x(k) - 1 xbar(k)||^2`, and `||x*||^2` is likewise the stacked
//! `N ||x*||^2`.
//!
//! The mean iterate descends on the averaged cost `(1/N) sum_i f_i`, so the
//! strong-convexity modulus used here is the aggregate one divided by `N`
//! (and `eta` is recomputed from it). With the aggregate modulus itself the
//! recursion contracts faster than the simulated mean does.

use serde::{Deserialize, Serialize};

use crate::engine::AgentStates;
use crate::error::{QdgdError, Result};
use crate::graph::MixingMatrix;
use crate::problem::ProblemInstance;
use crate::quantizer::{variance_param, QuantType, QuantizerSpec};

/// Everything the theorems need, evaluated for one instance and one pair of
/// constant stepsizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub l: f64,
    /// Modulus of the averaged cost, `lambda_min(sum_i H_i) / N`.
    pub mu: f64,
    pub eta: f64,
    /// `C = ||grad F(x*)|| / L`.
    pub grad_c: f64,
    pub beta: f64,
    /// Spectral gap parameter `(1 - beta) / 2`.
    pub c: f64,
    pub sigma_sq: f64,
    pub num_agents: usize,
    pub quant_type: QuantType,
    /// True when built for the exact (unquantized) exchange; `sigma_sq` is 0.
    pub exact: bool,
    /// Stacked `||x*||^2`.
    pub x_star_sq: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub a0: f64,
    pub b0: f64,
    pub q: f64,
    pub r: f64,
}

fn q_for(quant_type: QuantType, l: f64, eta: f64) -> f64 {
    let base = eta * eta / (l * (eta + 2.0 * l));
    match quant_type {
        QuantType::Type1 => 5.0 * base,
        QuantType::Type2 => base,
    }
}

/// Initial optimality and consensus errors `(A_0, B_0)` of `x0`.
pub fn initial_errors(problem: &ProblemInstance, x0: &AgentStates) -> Result<(f64, f64)> {
    if x0.num_agents() != problem.num_agents() || x0.dim() != problem.dim() {
        return Err(QdgdError::DimensionMismatch {
            expected: problem.num_agents() * problem.dim(),
            got: x0.num_agents() * x0.dim(),
        });
    }
    let (_, a0, b0) = x0.errors(problem.x_star().as_slice());
    Ok((a0, b0))
}

/// Builds the constants for constant stepsizes `(alpha, epsilon)`.
///
/// The exact quantizer has no variance; it is treated as type 1 with
/// `sigma_sq = 0` and flagged through [`TheoryConstants::exact`].
pub fn constants_for(
    problem: &ProblemInstance,
    mixing: &MixingMatrix,
    quant: &QuantizerSpec,
    x0: &AgentStates,
    alpha: f64,
    epsilon: f64,
) -> Result<TheoryConstants> {
    if !(alpha > 0.0 && epsilon > 0.0) {
        return Err(QdgdError::InvalidInput(format!(
            "stepsizes must be positive, got alpha = {alpha}, epsilon = {epsilon}"
        )));
    }
    if quant.dim() != problem.dim() {
        return Err(QdgdError::DimensionMismatch { expected: problem.dim(), got: quant.dim() });
    }
    if mixing.num_nodes() != problem.num_agents() {
        return Err(QdgdError::DimensionMismatch { expected: problem.num_agents(), got: mixing.num_nodes() });
    }
    mixing.ensure_nondegenerate()?;
    let (a0, b0) = initial_errors(problem, x0)?;
    let exact = quant.is_exact();
    if exact {
        log::warn!("bounds for the exact quantizer: sigma^2 = 0, variance terms drop out");
    }
    let quant_type = quant.quant_type().unwrap_or(QuantType::Type1);
    let sc = problem.constants();
    let beta = mixing.beta();
    let n_agents = problem.num_agents();
    let mu = sc.mu / n_agents as f64;
    let eta = mu * sc.l / (mu + sc.l);
    let mut consts = TheoryConstants {
        l: sc.l,
        mu,
        eta,
        grad_c: sc.c,
        beta,
        c: (1.0 - beta) / 2.0,
        sigma_sq: variance_param(quant),
        num_agents: n_agents,
        quant_type,
        exact,
        x_star_sq: n_agents as f64 * problem.x_star().norm_squared(),
        alpha,
        epsilon,
        a0,
        b0,
        q: q_for(quant_type, sc.l, eta),
        r: 0.0,
    };
    consts.r = consts.radius();
    Ok(consts)
}

impl TheoryConstants {
    /// Same instance, different constant stepsizes (R is recomputed).
    pub fn with_stepsizes(&self, alpha: f64, epsilon: f64) -> Self {
        let mut next = Self { alpha, epsilon, ..*self };
        next.r = next.radius();
        next
    }

    /// Invariant-region radius `R` of Theorem 1.
    fn radius(&self) -> f64 {
        let Self { l, eta, c, q, sigma_sq, alpha, epsilon, a0, b0, .. } = *self;
        let n = self.num_agents as f64;
        let drift = 3.0 * l * l * alpha * alpha / c;
        let (noise_floor, noise) = match self.quant_type {
            QuantType::Type1 => (4.0 * n * sigma_sq / eta, 4.0 * n * epsilon * sigma_sq),
            QuantType::Type2 => {
                (8.0 * sigma_sq * self.x_star_sq / eta, 8.0 * epsilon * sigma_sq * self.x_star_sq)
            }
        };
        noise_floor.max(4.0 / (q * c) * (drift + noise)).max(a0).max(b0 / q)
    }

    /// Upper bound on the per-step quantization noise `r(k)`.
    pub fn noise_bound(&self) -> f64 {
        match self.quant_type {
            QuantType::Type1 => self.num_agents as f64 * self.sigma_sq,
            QuantType::Type2 => 2.0 * self.sigma_sq * (self.r + self.x_star_sq),
        }
    }

    /// The largest stepsizes satisfying every feasibility condition,
    /// each scaled down by `fraction` in `(0, 1]`.
    ///
    /// For type 2 the joint condition is split evenly between its two terms.
    pub fn scaled_feasible_stepsizes(&self, fraction: f64) -> Result<(f64, f64)> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(QdgdError::InvalidInput(format!("fraction must lie in (0, 1], got {fraction}")));
        }
        let Self { l, mu, eta, c, q, sigma_sq, .. } = *self;
        let mut alpha = (c / l).min((q * c * c / (12.0 * l * l)).sqrt());
        if self.quant_type == QuantType::Type2 {
            alpha = alpha.min((q * c * c / (24.0 * l * l)).sqrt());
        }
        alpha *= fraction;
        let mut epsilon = (1.0 / (2.0 * c)).min(alpha).min(2.0 / ((mu + l) * alpha));
        if self.quant_type == QuantType::Type2 && sigma_sq > 0.0 {
            epsilon = epsilon.min(eta * alpha / (2.0 * sigma_sq)).min(q * c / (64.0 * sigma_sq));
        }
        Ok((alpha, epsilon.min(1.0) * fraction))
    }
}

/// Outcome of the Theorem 1 stepsize conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<String>,
}

/// Checks the Theorem 1 conditions for `(alpha, epsilon)` and names each
/// one that fails.
pub fn feasible_stepsizes(consts: &TheoryConstants, alpha: f64, epsilon: f64) -> FeasibilityReport {
    let TheoryConstants { l, mu, eta, c, q, sigma_sq, .. } = *consts;
    let mut checks: Vec<(&str, bool)> = vec![
        ("epsilon·alpha ≤ 2/(mu+L)", epsilon * alpha <= 2.0 / (mu + l)),
        ("alpha ≤ c/L", alpha <= c / l),
    ];
    match consts.quant_type {
        QuantType::Type1 => {
            checks.push(("alpha ≤ sqrt(q·c²/(12·L²))", alpha <= (q * c * c / (12.0 * l * l)).sqrt()));
            checks.push(("epsilon ≤ 1/(2c)", epsilon <= 1.0 / (2.0 * c)));
            checks.push(("epsilon ≤ alpha", epsilon <= alpha));
        }
        QuantType::Type2 => {
            checks.push(("epsilon ≤ 1/(2c)", epsilon <= 1.0 / (2.0 * c)));
            checks.push(("epsilon ≤ alpha", epsilon <= alpha));
            checks.push(("epsilon ≤ eta·alpha/(2·sigma²)", 2.0 * sigma_sq * epsilon <= eta * alpha));
            checks.push((
                "(3/c)·L²·alpha² + 8·epsilon·sigma² ≤ q·c/4",
                3.0 / c * l * l * alpha * alpha + 8.0 * epsilon * sigma_sq <= q * c / 4.0,
            ));
        }
    }
    let violations: Vec<String> = checks.into_iter().filter(|(_, ok)| !ok).map(|(name, _)| name.to_string()).collect();
    FeasibilityReport { feasible: violations.is_empty(), violations }
}

/// Closed-form bounds `(bound_A, bound_B)` of Theorem 2 at iteration `k`.
///
/// Uses `consts.r`; evaluated whether or not the stepsizes are feasible.
pub fn theorem2_bounds(consts: &TheoryConstants, alpha: f64, epsilon: f64, a0: f64, b0: f64, k: u64) -> (f64, f64) {
    let TheoryConstants { l, eta, c, sigma_sq, r, grad_c, .. } = *consts;
    let n = consts.num_agents as f64;
    let rho_a = 1.0 - 1.5 * eta * alpha * epsilon;
    let rho_b = 1.0 - c * epsilon / 2.0;
    let kappa = 0.25 + l / (2.0 * eta);
    let drift = 3.0 * l * l * alpha * alpha * (r + grad_c * grad_c) / c;
    let kf = k as f64;
    let cross = if k == 0 { 0.0 } else { kf * l * alpha * epsilon * kappa * rho_a.max(rho_b).powf(kf - 1.0) * b0 };
    let lead_a = rho_a.powf(kf) * a0;
    let lead_b = rho_b.powf(kf) * b0;
    match consts.quant_type {
        QuantType::Type1 => {
            let bracket = drift + 4.0 * n * epsilon * sigma_sq;
            let bound_b = lead_b + 2.0 / c * bracket;
            let bound_a = lead_a
                + cross
                + 4.0 * l / (3.0 * eta * c) * kappa * (2.0 / c) * bracket
                + 2.0 * n * epsilon * sigma_sq / (3.0 * eta * alpha);
            (bound_a, bound_b)
        }
        QuantType::Type2 => {
            let mass = r + consts.x_star_sq;
            let bracket = drift + 8.0 * epsilon * sigma_sq * mass;
            let bound_b = lead_b + 2.0 / c * bracket;
            let bound_a = lead_a
                + cross
                + 4.0 * l / (3.0 * eta * c) * kappa * bracket
                + 4.0 * mass * epsilon * sigma_sq / (3.0 * eta * alpha);
            (bound_a, bound_b)
        }
    }
}

/// Iterates the one-step error recursion from `(a0, b0)`; entry `k` of each
/// returned sequence is `(A_k, B_k)` for `k = 0..=k_max`.
pub fn recursion_oracle(
    consts: &TheoryConstants,
    alpha: f64,
    epsilon: f64,
    a0: f64,
    b0: f64,
    k_max: usize,
) -> (Vec<f64>, Vec<f64>) {
    let TheoryConstants { l, eta, c, beta, grad_c, .. } = *consts;
    let noise = consts.noise_bound();
    let rho_a = 1.0 - 1.5 * eta * alpha * epsilon;
    let rho_b = 1.0 - c * epsilon / 2.0;
    let coupling_a = l * alpha * epsilon * (0.25 + l / (2.0 * eta));
    let coupling_b = 3.0 * l * l * alpha * alpha * epsilon / c;
    let mut a_seq = Vec::with_capacity(k_max + 1);
    let mut b_seq = Vec::with_capacity(k_max + 1);
    let (mut a, mut b) = (a0, b0);
    a_seq.push(a);
    b_seq.push(b);
    for _ in 0..k_max {
        let b_next = rho_b * b + coupling_b * (a + grad_c * grad_c) + 4.0 * beta * beta * epsilon * epsilon * noise;
        let a_next = rho_a * a + coupling_a * b + epsilon * epsilon * noise;
        a = a_next;
        b = b_next;
        a_seq.push(a);
        b_seq.push(b);
    }
    (a_seq, b_seq)
}
