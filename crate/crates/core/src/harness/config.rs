//! Experiment configuration (strict JSON).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::AgentStates;
use crate::error::{QdgdError, Result};
use crate::problem::{CostScale, ProblemInstance};
use crate::quantizer::{variance_param, QuantizerSpec};
use crate::rng;
use crate::scheduler::{AdaptiveParams, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "N")]
    pub num_agents: usize,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub cost_scale: CostScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub link_prob: f64,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

/// Serialized schedule. `alpha0`/`epsilon0` are the fixed stepsizes of a
/// constant schedule and the starting values otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant {
        alpha0: f64,
        epsilon0: f64,
    },
    Diminishing {
        alpha0: f64,
        epsilon0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pow_alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pow_eps: Option<f64>,
    },
    Adaptive {
        alpha0: f64,
        epsilon0: f64,
        #[serde(rename = "K")]
        k: f64,
        #[serde(rename = "M")]
        m: usize,
        #[serde(rename = "J")]
        j: usize,
        #[serde(default = "default_true")]
        enable_phase2: bool,
        /// Defaults to the quantizer's variance parameter.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_sq: Option<f64>,
    },
}

impl ScheduleConfig {
    pub fn to_schedule(&self, quant: &QuantizerSpec) -> Result<Schedule> {
        let schedule = match *self {
            ScheduleConfig::Constant { alpha0, epsilon0 } => Schedule::Constant { alpha: alpha0, epsilon: epsilon0 },
            ScheduleConfig::Diminishing { alpha0, epsilon0, shift, pow_alpha, pow_eps } => {
                let Schedule::Diminishing { shift: s, pow_alpha: pa, pow_eps: pe, .. } =
                    Schedule::diminishing(alpha0, epsilon0)
                else {
                    unreachable!("diminishing constructor")
                };
                Schedule::Diminishing {
                    alpha0,
                    epsilon0,
                    shift: shift.unwrap_or(s),
                    pow_alpha: pow_alpha.unwrap_or(pa),
                    pow_eps: pow_eps.unwrap_or(pe),
                }
            }
            ScheduleConfig::Adaptive { alpha0, epsilon0, k, m, j, enable_phase2, sigma_sq } => {
                Schedule::Adaptive(AdaptiveParams {
                    alpha0,
                    epsilon0,
                    k,
                    m,
                    j,
                    sigma_sq: sigma_sq.unwrap_or_else(|| variance_param(quant)),
                    enable_phase2,
                })
            }
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, ScheduleConfig::Adaptive { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    pub schedule: ScheduleConfig,
}

/// Initial agent states, shared by every trial and every case.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitConfig {
    #[default]
    Zeros,
    /// Independent `N(0, scale^2)` entries drawn from `seed`.
    Gaussian { scale: f64, seed: u64 },
}

impl InitConfig {
    pub fn build(&self, num_agents: usize, dim: usize) -> Result<AgentStates> {
        match *self {
            InitConfig::Zeros => Ok(AgentStates::zeros(num_agents, dim)),
            InitConfig::Gaussian { scale, seed } => {
                if !(scale >= 0.0 && scale.is_finite()) {
                    return Err(QdgdError::Config(format!("init scale must be finite and >= 0, got {scale}")));
                }
                use rand::Rng;
                use rand_distr::StandardNormal;
                let mut rng = rng::seeded(seed);
                let rows: Vec<Vec<f64>> = (0..num_agents)
                    .map(|_| (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect();
                AgentStates::from_rows(&rows)
            }
        }
    }
}

fn default_trials() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub graph: GraphConfig,
    pub quantizer: QuantizerSpec,
    pub cases: Vec<CaseConfig>,
    pub iterations: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub quantize_self: bool,
    pub output_dir: PathBuf,
    /// Base seed of the per-trial quantization streams.
    pub seed: u64,
    #[serde(default)]
    pub init: InitConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| QdgdError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QdgdError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantizer.dim() != self.problem.n {
            return Err(QdgdError::Config(format!(
                "quantizer dim {} does not match problem n {}",
                self.quantizer.dim(),
                self.problem.n
            )));
        }
        if self.trials == 0 {
            return Err(QdgdError::Config("trials must be at least 1".into()));
        }
        if self.cases.is_empty() {
            return Err(QdgdError::Config("at least one case is required".into()));
        }
        let mut seen = HashSet::new();
        for case in &self.cases {
            let valid_name = !case.name.is_empty()
                && case.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-');
            if !valid_name {
                return Err(QdgdError::Config(format!(
                    "case name {:?} must be non-empty ASCII letters, digits, '_' or '-'",
                    case.name
                )));
            }
            if !seen.insert(case.name.as_str()) {
                return Err(QdgdError::Config(format!("duplicate case name {:?}", case.name)));
            }
            case.schedule.to_schedule(&self.quantizer)?;
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<ProblemInstance> {
        let p = &self.problem;
        crate::problem::generate_least_squares_scaled(p.num_agents, p.m, p.n, p.seed, p.cost_scale)
    }

    pub fn build_init(&self) -> Result<AgentStates> {
        self.init.build(self.problem.num_agents, self.problem.n)
    }
}

/// Section 6 defaults: N = 20, m = 5, n = 10, link probability 0.4.
pub fn default_config(quantizer: QuantizerSpec, cases: Vec<CaseConfig>) -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemConfig { num_agents: 20, m: 5, n: 10, seed: 1, cost_scale: CostScale::Unit },
        graph: GraphConfig { link_prob: 0.4, seed: 2 },
        quantizer,
        cases,
        iterations: 50_000,
        trials: default_trials(),
        quantize_self: false,
        output_dir: PathBuf::from("out"),
        seed: 3,
        init: InitConfig::Zeros,
    }
}

/// `alpha0` and `epsilon0` of the section 6 experiments.
pub const PAPER_ALPHA0: f64 = 0.01;
pub const PAPER_EPSILON0: f64 = 0.5;

/// Algorithm 1 with the Case 1 parameters `K = 5000, M = 1000, J = 500`.
pub fn paper_adaptive(alpha0: f64, epsilon0: f64, enable_phase2: bool) -> ScheduleConfig {
    ScheduleConfig::Adaptive { alpha0, epsilon0, k: 5000.0, m: 1000, j: 500, enable_phase2, sigma_sq: None }
}

/// The five stepsize choices of Experiment 1.
pub fn experiment1_cases(alpha0: f64, epsilon0: f64) -> Vec<CaseConfig> {
    let case = |name: &str, schedule| CaseConfig { name: name.to_string(), schedule };
    vec![
        case("case1", paper_adaptive(alpha0, epsilon0, true)),
        case("case2", ScheduleConfig::Constant { alpha0, epsilon0 }),
        case("case3", ScheduleConfig::Constant { alpha0: alpha0 / 5.0, epsilon0 }),
        case("case4", ScheduleConfig::Constant { alpha0: alpha0 / 5.0, epsilon0: epsilon0 / 5.0 }),
        case(
            "case5",
            ScheduleConfig::Diminishing { alpha0, epsilon0, shift: None, pow_alpha: None, pow_eps: None },
        ),
    ]
}
