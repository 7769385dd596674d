//! Running configured experiments, the two paper experiments, and the
//! bound verification.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bounds::{self, FeasibilityReport, TheoryConstants};
use crate::engine::{monte_carlo, AgentStates, MonteCarloSpec};
use crate::error::{QdgdError, Result};
use crate::graph::{generate_er_graph, metropolis_weights, MixingMatrix};
use crate::harness::config::{paper_adaptive, CaseConfig, ExperimentConfig, ScheduleConfig};
use crate::harness::output::{self, fmt_f64, RunRecord};
use crate::harness::plot;
use crate::problem::{ProblemInstance, SmoothnessConstants};
use crate::quantizer::QuantizerSpec;
use crate::scheduler::Schedule;

/// Problem, network, quantizer and initial state shared by every case.
pub struct Setup {
    pub problem: ProblemInstance,
    pub mixing: MixingMatrix,
    pub num_edges: usize,
    pub quant: QuantizerSpec,
    pub init: AgentStates,
}

impl Setup {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let problem = config.build_problem()?;
        let graph = generate_er_graph(config.problem.num_agents, config.graph.link_prob, config.graph.seed)?;
        let mixing = metropolis_weights(&graph)?;
        Ok(Self {
            problem,
            mixing,
            num_edges: graph.num_edges(),
            quant: config.quantizer,
            init: config.build_init()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSummary {
    pub name: String,
    pub final_mean_err: f64,
    pub phase_changes: Vec<usize>,
}

/// Provenance written next to the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub constants: SmoothnessConstants,
    pub beta: f64,
    pub num_edges: usize,
    pub cases: Vec<CaseSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

impl ExperimentOutput {
    pub fn record(&self, name: &str) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.case_name == name)
    }
}

/// Runs every case of `config` on the shared setup, in declared order.
pub fn run_config(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let setup = Setup::build(config)?;
    let mut records = Vec::with_capacity(config.cases.len());
    for case in &config.cases {
        let schedule = case.schedule.to_schedule(&setup.quant)?;
        log::info!("running case {} ({} trials, {} iterations)", case.name, config.trials, config.iterations);
        let spec = MonteCarloSpec {
            problem: &setup.problem,
            mixing: &setup.mixing,
            quant: &setup.quant,
            schedule: &schedule,
            iterations: config.iterations,
            init: &setup.init,
            quantize_self: config.quantize_self,
        };
        let result = monte_carlo(&spec, config.trials, config.seed)?;
        records.push(RunRecord::from_monte_carlo(&case.name, result));
    }
    let cases = records
        .iter()
        .map(|r| CaseSummary {
            name: r.case_name.clone(),
            final_mean_err: r.final_mean_err(),
            phase_changes: r.phase_changes().iter().map(|c| c.iter).collect(),
        })
        .collect();
    let summary = RunSummary {
        config: config.clone(),
        constants: setup.problem.constants(),
        beta: setup.mixing.beta(),
        num_edges: setup.num_edges,
        cases,
    };
    Ok(ExperimentOutput { records, summary })
}

fn stepsizes_of(schedule: &ScheduleConfig) -> (f64, f64) {
    match *schedule {
        ScheduleConfig::Constant { alpha0, epsilon0 }
        | ScheduleConfig::Diminishing { alpha0, epsilon0, .. }
        | ScheduleConfig::Adaptive { alpha0, epsilon0, .. } => (alpha0, epsilon0),
    }
}

/// Experiment 1: the five stepsize cases, using the `alpha0`/`epsilon0` of
/// the config's first case.
pub fn run_experiment1(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (alpha0, epsilon0) = config
        .cases
        .first()
        .map(|c| stepsizes_of(&c.schedule))
        .ok_or_else(|| QdgdError::Config("experiment 1 needs a case to take alpha0 and epsilon0 from".into()))?;
    let mut config = config.clone();
    config.cases = crate::harness::config::experiment1_cases(alpha0, epsilon0);
    run_config(&config)
}

/// Experiment 2: the config's first adaptive case with and without the
/// `alpha`-halving phase, under identical seeds.
pub fn run_experiment2(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let adaptive = config
        .cases
        .iter()
        .find(|c| c.schedule.is_adaptive())
        .ok_or_else(|| QdgdError::Config("experiment 2 needs an adaptive case".into()))?;
    let with_phase2 = |enable: bool| {
        let mut schedule = adaptive.schedule.clone();
        if let ScheduleConfig::Adaptive { enable_phase2, .. } = &mut schedule {
            *enable_phase2 = enable;
        }
        schedule
    };
    let mut config = config.clone();
    config.cases = vec![
        CaseConfig { name: "full".into(), schedule: with_phase2(true) },
        CaseConfig { name: "ablated".into(), schedule: with_phase2(false) },
    ];
    run_config(&config)
}

/// Config for the paper's experiments with the given quantizer.
pub fn paper_config(quant: QuantizerSpec, iterations: usize, trials: usize) -> ExperimentConfig {
    let mut config = crate::harness::config::default_config(
        quant,
        vec![CaseConfig {
            name: "case1".into(),
            schedule: paper_adaptive(crate::harness::config::PAPER_ALPHA0, crate::harness::config::PAPER_EPSILON0, true),
        }],
    );
    config.iterations = iterations;
    config.trials = trials;
    config
}

/// Writes the CSVs and summary (and optionally `plot.svg`) to `dir`.
/// Nothing is left behind if a write fails.
pub fn write_output(out: &ExperimentOutput, dir: &Path, with_plot: bool) -> Result<Vec<PathBuf>> {
    let summary = serde_json::to_string_pretty(&out.summary)? + "\n";
    let mut files = output::run_files(&out.records, summary);
    if with_plot {
        files.push(("plot.svg".into(), plot::render_svg(&out.records)?));
    }
    output::write_all(dir, &files)
}

/// One row of the bound comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsRow {
    pub k: usize,
    pub empirical_a: f64,
    pub empirical_b: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub oracle_a: f64,
    pub oracle_b: f64,
    pub closed_a: f64,
    pub closed_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsCase {
    pub name: String,
    pub constants: TheoryConstants,
    pub feasibility: FeasibilityReport,
    pub trials: usize,
    pub rows: Vec<BoundsRow>,
}

/// Name of the extra case added by `feasible_fraction`.
pub const FEASIBLE_CASE: &str = "feasible";

/// Compares simulated `A_k`, `B_k` (always with `quantize_self`) against the
/// recursion and the closed forms for each constant case. With
/// `feasible_fraction`, a case named `feasible` using
/// [`TheoryConstants::scaled_feasible_stepsizes`] is added.
pub fn verify_bounds(config: &ExperimentConfig, feasible_fraction: Option<f64>) -> Result<Vec<BoundsCase>> {
    let setup = Setup::build(config)?;
    let mut cases: Vec<(String, f64, f64)> = config
        .cases
        .iter()
        .filter_map(|c| match c.schedule {
            ScheduleConfig::Constant { alpha0, epsilon0 } => Some((c.name.clone(), alpha0, epsilon0)),
            _ => None,
        })
        .collect();
    if let Some(fraction) = feasible_fraction {
        let probe = bounds::constants_for(&setup.problem, &setup.mixing, &setup.quant, &setup.init, 1.0, 1.0)?;
        let (alpha, epsilon) = probe.scaled_feasible_stepsizes(fraction)?;
        cases.push((FEASIBLE_CASE.to_string(), alpha, epsilon));
    }
    if cases.is_empty() {
        return Err(QdgdError::Config("bound verification needs a constant case or a feasible fraction".into()));
    }
    let mut out = Vec::with_capacity(cases.len());
    for (name, alpha, epsilon) in cases {
        let consts = bounds::constants_for(&setup.problem, &setup.mixing, &setup.quant, &setup.init, alpha, epsilon)?;
        let feasibility = bounds::feasible_stepsizes(&consts, alpha, epsilon);
        if !feasibility.feasible {
            log::warn!("case {name}: stepsizes infeasible ({}), bounds are advisory", feasibility.violations.join("; "));
        }
        let schedule = Schedule::Constant { alpha, epsilon };
        let spec = MonteCarloSpec {
            problem: &setup.problem,
            mixing: &setup.mixing,
            quant: &setup.quant,
            schedule: &schedule,
            iterations: config.iterations,
            init: &setup.init,
            quantize_self: true,
        };
        let mc = monte_carlo(&spec, config.trials, config.seed)?;
        let (oracle_a, oracle_b) =
            bounds::recursion_oracle(&consts, alpha, epsilon, consts.a0, consts.b0, config.iterations);
        let rows = mc
            .rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let (closed_a, closed_b) = bounds::theorem2_bounds(&consts, alpha, epsilon, consts.a0, consts.b0, k as u64);
                BoundsRow {
                    k,
                    empirical_a: r.opt_sq,
                    empirical_b: r.consensus_sq,
                    se_a: r.se_opt_sq,
                    se_b: r.se_consensus_sq,
                    oracle_a: oracle_a[k],
                    oracle_b: oracle_b[k],
                    closed_a,
                    closed_b,
                }
            })
            .collect();
        out.push(BoundsCase { name, constants: consts, feasibility, trials: config.trials, rows });
    }
    Ok(out)
}

pub fn bounds_csv(case: &BoundsCase) -> String {
    let mut out = String::from("k,empirical_A,empirical_B,oracle_A,oracle_B,closedform_A,closedform_B,feasible\n");
    for r in &case.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.empirical_a),
            fmt_f64(r.empirical_b),
            fmt_f64(r.oracle_a),
            fmt_f64(r.oracle_b),
            fmt_f64(r.closed_a),
            fmt_f64(r.closed_b),
            case.feasibility.feasible
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_bounds(cases: &[BoundsCase], dir: &Path) -> Result<Vec<PathBuf>> {
    #[derive(Serialize)]
    struct Entry<'a> {
        name: &'a str,
        constants: &'a TheoryConstants,
        feasibility: &'a FeasibilityReport,
        trials: usize,
    }
    let entries: Vec<Entry<'_>> = cases
        .iter()
        .map(|c| Entry { name: &c.name, constants: &c.constants, feasibility: &c.feasibility, trials: c.trials })
        .collect();
    let mut files: Vec<(String, String)> =
        cases.iter().map(|c| (format!("{}_bounds.csv", c.name), bounds_csv(c))).collect();
    files.push(("bounds_summary.json".into(), serde_json::to_string_pretty(&entries)? + "\n"));
    output::write_all(dir, &files)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseInfo {
    pub name: String,
    pub alpha: f64,
    pub epsilon: f64,
    pub q: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub feasibility: FeasibilityReport,
}

/// Constants of the configured instance, and the Theorem 1 check for each
/// case at its initial stepsizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoReport {
    #[serde(rename = "L")]
    pub l: f64,
    /// Smallest eigenvalue of the summed local Hessians.
    pub mu: f64,
    /// Modulus of the averaged cost, as used by the bounds.
    pub mu_avg: f64,
    pub eta: f64,
    #[serde(rename = "C")]
    pub grad_c: f64,
    pub beta: f64,
    pub c: f64,
    pub sigma_sq: f64,
    pub cases: Vec<CaseInfo>,
}

pub fn info(config: &ExperimentConfig) -> Result<InfoReport> {
    let setup = Setup::build(config)?;
    let mut cases = Vec::with_capacity(config.cases.len());
    let mut first: Option<TheoryConstants> = None;
    for case in &config.cases {
        let (alpha, epsilon) = stepsizes_of(&case.schedule);
        let consts = bounds::constants_for(&setup.problem, &setup.mixing, &setup.quant, &setup.init, alpha, epsilon)?;
        cases.push(CaseInfo {
            name: case.name.clone(),
            alpha,
            epsilon,
            q: consts.q,
            r: consts.r,
            feasibility: bounds::feasible_stepsizes(&consts, alpha, epsilon),
        });
        first.get_or_insert(consts);
    }
    let consts = first.expect("config has at least one case");
    Ok(InfoReport {
        l: consts.l,
        mu: setup.problem.mu(),
        mu_avg: consts.mu,
        eta: consts.eta,
        grad_c: consts.grad_c,
        beta: consts.beta,
        c: consts.c,
        sigma_sq: consts.sigma_sq,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{default_config, experiment1_cases};

    fn small(quant: QuantizerSpec, iterations: usize, trials: usize) -> ExperimentConfig {
        let mut config = default_config(quant, experiment1_cases(0.01, 0.5));
        config.problem.num_agents = 6;
        config.problem.n = 4;
        config.problem.m = 3;
        config.graph.link_prob = 0.6;
        config.iterations = iterations;
        config.trials = trials;
        config
    }

    #[test]
    fn zero_iterations_give_identical_single_rows() {
        let out = run_experiment1(&small(QuantizerSpec::grid(0.01, 4).unwrap(), 0, 2)).unwrap();
        assert_eq!(out.records.len(), 5);
        let first = out.records[0].rows[0].mean_err;
        for r in &out.records {
            assert_eq!(r.rows.len(), 1);
            assert_eq!(r.rows[0].mean_err, first);
        }
    }

    #[test]
    fn exact_cases_differ_only_through_alpha() {
        let config = small(QuantizerSpec::exact(4).unwrap(), 300, 1);
        let out = run_experiment1(&config).unwrap();
        let (c2, c3) = (out.record("case2").unwrap(), out.record("case3").unwrap());
        assert!(c2.rows.iter().all(|r| r.alpha == 0.01 && r.epsilon == 0.5));
        assert!(c3.rows.iter().all(|r| r.alpha == 0.002 && r.epsilon == 0.5));
        assert_ne!(c2.final_mean_err(), c3.final_mean_err());
        let again = run_experiment1(&config).unwrap();
        assert_eq!(output::combined_csv(&out.records), output::combined_csv(&again.records));
    }

    #[test]
    fn experiment2_shares_phase1() {
        let mut config = small(QuantizerSpec::grid(0.01, 4).unwrap(), 1500, 2);
        config.cases.truncate(1);
        let out = run_experiment2(&config).unwrap();
        let (full, ablated) = (&out.records[0], &out.records[1]);
        assert_eq!((full.case_name.as_str(), ablated.case_name.as_str()), ("full", "ablated"));
        // first event fires at it = M = 1000
        assert_eq!(full.rows[..1000], ablated.rows[..1000]);
        assert_ne!(full.rows[1000].alpha, ablated.rows[1000].alpha);
    }

    #[test]
    fn ablated_that_never_triggers_matches_constant_case() {
        let mut config = small(QuantizerSpec::grid(0.01, 4).unwrap(), 2500, 2);
        config.cases = vec![
            CaseConfig {
                name: "frozen".into(),
                schedule: ScheduleConfig::Adaptive {
                    alpha0: 0.01,
                    epsilon0: 0.5,
                    k: 1e12,
                    m: 1000,
                    j: 500,
                    enable_phase2: false,
                    sigma_sq: None,
                },
            },
            CaseConfig { name: "constant".into(), schedule: ScheduleConfig::Constant { alpha0: 0.01, epsilon0: 0.5 } },
        ];
        let out = run_config(&config).unwrap();
        for (a, b) in out.records[0].rows.iter().zip(&out.records[1].rows) {
            assert_eq!((a.alpha, a.epsilon, a.mean_err), (b.alpha, b.epsilon, b.mean_err));
        }
    }

    #[test]
    fn experiment2_requires_adaptive_case() {
        let mut config = small(QuantizerSpec::grid(0.01, 4).unwrap(), 10, 1);
        config.cases.remove(0);
        assert!(matches!(run_experiment2(&config), Err(QdgdError::Config(_))));
    }

    #[test]
    fn verify_bounds_reports_every_row() {
        let mut config = small(QuantizerSpec::grid(0.05, 4).unwrap(), 50, 4);
        config.cases.truncate(2);
        let cases = verify_bounds(&config, Some(0.5)).unwrap();
        assert_eq!(cases.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), vec!["case2", "feasible"]);
        assert!(cases[1].feasibility.feasible);
        assert!(!cases[0].feasibility.feasible);
        let csv = bounds_csv(&cases[1]);
        assert_eq!(csv.lines().count(), 52);
        assert!(csv.lines().nth(1).unwrap().ends_with(",true"));
    }

    #[test]
    fn written_output_has_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment1(&small(QuantizerSpec::grid(0.01, 4).unwrap(), 20, 1)).unwrap();
        let paths = write_output(&out, dir.path(), true).unwrap();
        assert_eq!(paths.len(), 9);
        let case1 = std::fs::read_to_string(dir.path().join("case1.csv")).unwrap();
        assert_eq!(case1.lines().count(), 22);
    }

    #[test]
    fn info_reports_constants() {
        let config = small(QuantizerSpec::normalized(10, 4).unwrap(), 10, 1);
        let report = info(&config).unwrap();
        assert_eq!(report.cases.len(), 5);
        assert!((report.mu_avg * 6.0 - report.mu).abs() <= 1e-12 * report.mu);
        assert!(report.c > 0.0 && report.c < 0.5);
    }
}
