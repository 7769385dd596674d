//! Stepsize schedules `(alpha(k), epsilon(k))`.
//!
//! Besides constant and polynomially diminishing stepsizes, this module
//! implements the three-phase adaptive selection:
//!
//! 1. burn-in with `(alpha0, epsilon0)` for `M` iterations;
//! 2. while `K alpha^2 >= sigma^2 epsilon / alpha`, halve `alpha` at the end
//!    of every epoch and double the epoch length;
//! 3. once that fails (the trigger), scale `alpha` by `1/sqrt(2)` and
//!    `epsilon` by `1/(2 sqrt(2))` at the end of every epoch and quadruple the
//!    epoch length.
//!
//! Epoch boundaries are the iterations where `(it - t_Q) mod (J ind) == 0`.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{QdgdError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    pub alpha0: f64,
    pub epsilon0: f64,
    /// Proxy for the ratio between the `alpha^2` and `sigma^2 epsilon/alpha` error terms.
    pub k: f64,
    /// Burn-in length.
    pub m: usize,
    /// Base epoch length.
    pub j: usize,
    pub sigma_sq: f64,
    /// `false` runs the ablated variant without `alpha`-only halving.
    pub enable_phase2: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant { alpha: f64, epsilon: f64 },
    /// `alpha0 (shift/(k+shift))^pow_alpha`, `epsilon0 (shift/(k+shift))^pow_eps`.
    Diminishing { alpha0: f64, epsilon0: f64, shift: f64, pow_alpha: f64, pow_eps: f64 },
    Adaptive(AdaptiveParams),
}

impl Schedule {
    /// Diminishing schedule with shift 1000 and powers 1/4, 3/4.
    pub fn diminishing(alpha0: f64, epsilon0: f64) -> Self {
        Schedule::Diminishing { alpha0, epsilon0, shift: 1000.0, pow_alpha: 0.25, pow_eps: 0.75 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(QdgdError::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Schedule::Constant { alpha, epsilon } => {
                positive("alpha", alpha)?;
                positive("epsilon", epsilon)
            }
            Schedule::Diminishing { alpha0, epsilon0, shift, pow_alpha, pow_eps } => {
                positive("alpha0", alpha0)?;
                positive("epsilon0", epsilon0)?;
                positive("shift", shift)?;
                if !(pow_alpha.is_finite() && pow_eps.is_finite() && pow_alpha >= 0.0 && pow_eps >= 0.0) {
                    return Err(QdgdError::InvalidInput("diminishing powers must be nonnegative".into()));
                }
                Ok(())
            }
            Schedule::Adaptive(p) => {
                positive("alpha0", p.alpha0)?;
                positive("epsilon0", p.epsilon0)?;
                positive("K", p.k)?;
                if p.m == 0 || p.j == 0 {
                    return Err(QdgdError::InvalidInput("M and J must be positive integers".into()));
                }
                if !(p.sigma_sq >= 0.0 && p.sigma_sq.is_finite()) {
                    return Err(QdgdError::InvalidInput(format!("sigma^2 must be nonnegative, got {}", p.sigma_sq)));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Phase1,
    Phase2,
    Phase3,
    NonAdaptive,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Phase1 => "phase1",
            Phase::Phase2 => "phase2",
            Phase::Phase3 => "phase3",
            Phase::NonAdaptive => "nonadaptive",
        }
    }
}

/// What happened at an epoch boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateEvent {
    /// `alpha /= 2`, `ind *= 2`.
    HalveAlpha,
    /// `alpha /= sqrt 2`, `epsilon /= 2 sqrt 2`, `ind *= 4`.
    JointReduction,
    /// Ablated variant before the trigger: only the trigger was re-checked.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveState {
    /// Iteration of the last update (initially `M`).
    pub t_q: usize,
    /// Epoch length multiplier.
    pub ind: u64,
    pub trigger: bool,
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub alpha: f64,
    pub epsilon: f64,
    pub phase: Phase,
    pub event: Option<UpdateEvent>,
}

/// `true` iff `K alpha^2 < sigma^2 epsilon / alpha`. Equality does not trigger.
pub fn trigger_condition(alpha: f64, epsilon: f64, k: f64, sigma_sq: f64) -> bool {
    k * alpha * alpha < sigma_sq * epsilon / alpha
}

/// Stateful stepsize generator. Must be queried with `it = 0, 1, 2, ...`.
#[derive(Debug, Clone)]
pub struct Scheduler {
    schedule: Schedule,
    state: Option<AdaptiveState>,
    next_it: usize,
}

impl Scheduler {
    pub fn new(schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let state = match schedule {
            Schedule::Adaptive(p) => Some(AdaptiveState {
                t_q: p.m,
                ind: 1,
                trigger: false,
                alpha: p.alpha0,
                epsilon: p.epsilon0,
            }),
            _ => None,
        };
        Ok(Self { schedule, state, next_it: 0 })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn state(&self) -> Option<&AdaptiveState> {
        self.state.as_ref()
    }

    pub fn stepsizes_at(&mut self, it: usize) -> Result<StepSizes> {
        if it != self.next_it {
            return Err(QdgdError::OutOfOrderCall { expected: self.next_it, got: it });
        }
        self.next_it += 1;
        let steps = match self.schedule {
            Schedule::Constant { alpha, epsilon } => {
                StepSizes { alpha, epsilon, phase: Phase::NonAdaptive, event: None }
            }
            Schedule::Diminishing { alpha0, epsilon0, shift, pow_alpha, pow_eps } => {
                let ratio = shift / (it as f64 + shift);
                StepSizes {
                    alpha: alpha0 * ratio.powf(pow_alpha),
                    epsilon: epsilon0 * ratio.powf(pow_eps),
                    phase: Phase::NonAdaptive,
                    event: None,
                }
            }
            Schedule::Adaptive(params) => {
                let state = self.state.as_mut().expect("adaptive schedule carries state");
                adaptive_step(&params, state, it)
            }
        };
        Ok(steps)
    }
}

fn adaptive_step(p: &AdaptiveParams, s: &mut AdaptiveState, it: usize) -> StepSizes {
    if it < p.m {
        return StepSizes { alpha: s.alpha, epsilon: s.epsilon, phase: Phase::Phase1, event: None };
    }
    let epoch = (p.j as u64).saturating_mul(s.ind);
    let mut event = None;
    if ((it - s.t_q) as u64).is_multiple_of(epoch) {
        if trigger_condition(s.alpha, s.epsilon, p.k, p.sigma_sq) {
            s.trigger = true;
        }
        if !s.trigger {
            if p.enable_phase2 {
                s.alpha /= 2.0;
                s.ind = s.ind.saturating_mul(2);
                s.t_q = it;
                event = Some(UpdateEvent::HalveAlpha);
            } else {
                event = Some(UpdateEvent::Frozen);
            }
        } else {
            s.alpha /= SQRT_2;
            s.epsilon /= 2.0 * SQRT_2;
            s.ind = s.ind.saturating_mul(4);
            s.t_q = it;
            event = Some(UpdateEvent::JointReduction);
        }
    }
    let phase = match (s.trigger, p.enable_phase2) {
        (true, _) => Phase::Phase3,
        (false, true) => Phase::Phase2,
        (false, false) => Phase::Phase1,
    };
    StepSizes { alpha: s.alpha, epsilon: s.epsilon, phase, event }
}
