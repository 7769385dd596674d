//! Minimal SVG rendering of `log10(mean error)` against the iteration.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{QdgdError, Result};
use crate::harness::output::RunRecord;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN: f64 = 60.0;
const MAX_VERTICES: usize = 2000;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Indices kept after decimation: every `stride`-th point plus the last.
fn decimated(len: usize) -> Vec<usize> {
    let stride = len.div_ceil(MAX_VERTICES).max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if len > 0 && idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

/// Renders the records as an SVG document.
pub fn render_svg(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() || records.iter().all(|r| r.rows.is_empty()) {
        return Err(QdgdError::EmptyInput);
    }
    let points = |r: &RunRecord| -> Vec<(f64, f64)> {
        decimated(r.rows.len())
            .into_iter()
            .map(|i| (r.rows[i].iter as f64, r.rows[i].mean_err.log10()))
            .filter(|(_, y)| y.is_finite())
            .collect()
    };
    let all: Vec<Vec<(f64, f64)>> = records.iter().map(points).collect();
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all.iter().flatten() {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (-1.0, 0.0);
    }
    if y_max - y_min < 1e-9 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let sx = |x: f64| MARGIN + x / x_max * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, bottom, top) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(w, r#"<path d="M{left},{top} V{bottom} H{right}" fill="none" stroke="black"/>"#);
    let _ = writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">iteration k</text>"#, WIDTH / 2.0, HEIGHT - 15.0);
    let _ = writeln!(
        w,
        r#"<text x="15" y="{}" font-size="14" transform="rotate(-90 15 {})" text-anchor="middle">log10 mean error</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(w, r#"<text x="{left}" y="{}" font-size="11" text-anchor="middle">0</text>"#, bottom + 15.0);
    let _ = writeln!(w, r#"<text x="{right}" y="{}" font-size="11" text-anchor="middle">{x_max}</text>"#, bottom + 15.0);
    let _ = writeln!(w, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y_max:.2}</text>"#, left - 5.0, top + 4.0);
    let _ = writeln!(w, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y_min:.2}</text>"#, left - 5.0, bottom + 4.0);

    for (i, (record, pts)) in records.iter().zip(&all).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            w,
            r#"<polyline class="series" data-case="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(&record.case_name),
            coords.join(" ")
        );
        for change in record.phase_changes() {
            let y = record.rows[change.iter].mean_err.log10();
            if y.is_finite() {
                let _ = writeln!(
                    w,
                    r#"<circle class="phase-change" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                    sx(change.iter as f64),
                    sy(y)
                );
            }
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            w,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            right - 150.0,
            right - 125.0
        );
        let _ = writeln!(
            w,
            r#"<text class="legend" x="{}" y="{}" font-size="12">{}</text>"#,
            right - 120.0,
            ly + 4.0,
            escape(&record.case_name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders and writes the plot to `path`.
pub fn emit_plot(records: &[RunRecord], path: &Path) -> Result<()> {
    let svg = render_svg(records)?;
    std::fs::write(path, svg)?;
    Ok(())
}
