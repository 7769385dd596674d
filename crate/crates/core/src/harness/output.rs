//! Run records and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{AveragedMetrics, MonteCarloResult};
use crate::error::Result;
use crate::scheduler::Phase;

pub const CSV_HEADER: &str = "iter,alpha,epsilon,phase,mean_err,log10_mean_err,opt_sq,consensus_sq,stderr_mean_err";

/// All rows of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_name: String,
    pub trials: usize,
    pub rows: Vec<AveragedMetrics>,
}

/// Iteration at which a case moved from one phase to another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub iter: usize,
    pub from: Phase,
    pub to: Phase,
}

impl RunRecord {
    pub fn from_monte_carlo(case_name: &str, result: MonteCarloResult) -> Self {
        Self { case_name: case_name.to_string(), trials: result.trials, rows: result.rows }
    }

    pub fn final_mean_err(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.mean_err)
    }

    pub fn phase_changes(&self) -> Vec<PhaseChange> {
        self.rows
            .windows(2)
            .filter(|w| w[0].phase != w[1].phase)
            .map(|w| PhaseChange { iter: w[1].iter, from: w[0].phase, to: w[1].phase })
            .collect()
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn log10_field(mean_err: f64) -> String {
    if mean_err == 0.0 {
        "-inf".into()
    } else {
        fmt_f64(mean_err.log10())
    }
}

fn push_row(out: &mut String, r: &AveragedMetrics) {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        r.iter,
        fmt_f64(r.alpha),
        fmt_f64(r.epsilon),
        r.phase.label(),
        fmt_f64(r.mean_err),
        log10_field(r.mean_err),
        fmt_f64(r.opt_sq),
        fmt_f64(r.consensus_sq),
        fmt_f64(r.se_mean_err),
    )
    .expect("writing to a String cannot fail");
}

pub fn case_csv(record: &RunRecord) -> String {
    let mut out = String::with_capacity(160 * (record.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &record.rows {
        push_row(&mut out, r);
    }
    out
}

/// Every case in long format, in declared order, with a leading `case` column.
pub fn combined_csv(records: &[RunRecord]) -> String {
    let mut out = String::new();
    out.push_str("case,");
    out.push_str(CSV_HEADER);
    out.push('\n');
    for record in records {
        for r in &record.rows {
            out.push_str(&record.case_name);
            out.push(',');
            push_row(&mut out, r);
        }
    }
    out
}

pub fn phase_changes_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("case,iter,from,to\n");
    for record in records {
        for c in record.phase_changes() {
            writeln!(out, "{},{},{},{}", record.case_name, c.iter, c.from.label(), c.to.label())
                .expect("writing to a String cannot fail");
        }
    }
    out
}

/// Writes `files` (name, contents) under `dir`. If any write fails, every
/// file written by this call is removed again before the error is returned.
pub fn write_all(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, contents) {
            for done in &written {
                let _ = fs::remove_file(done);
            }
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(written)
}

/// Standard file set for a finished run.
pub fn run_files(records: &[RunRecord], summary_json: String) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> =
        records.iter().map(|r| (format!("{}.csv", r.case_name), case_csv(r))).collect();
    files.push(("combined.csv".into(), combined_csv(records)));
    files.push(("phase_changes.csv".into(), phase_changes_csv(records)));
    files.push(("summary.json".into(), summary_json));
    files
}
