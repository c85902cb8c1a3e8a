//! Report records, training logs and SVG curve plots.

use std::fmt::Write as _;
use std::path::Path;

use attrib_core::evaluation::EvalReport;

use crate::error::CliError;

pub const REPORT_HEADER: &str = "# attrib-report v1";
pub const TRAIN_LOG_TAG: &str = "attrib-train-log";

/// `key=value` lines under a version header.
pub fn report_text(report: &EvalReport, resamples: usize, n_test: usize) -> String {
    let mut out = String::new();
    writeln!(out, "{REPORT_HEADER}").unwrap();
    writeln!(out, "method={}", report.method).unwrap();
    writeln!(out, "iauc={}", report.iauc).unwrap();
    writeln!(out, "ci_low={}", report.ci_low).unwrap();
    writeln!(out, "ci_high={}", report.ci_high).unwrap();
    writeln!(out, "full_feature_loglik={}", report.full_feature_loglik).unwrap();
    writeln!(out, "leakage_flag={}", report.leakage_flag).unwrap();
    writeln!(out, "resamples={resamples}").unwrap();
    writeln!(out, "n_test={n_test}").unwrap();
    writeln!(out, "seed={}", report.seed).unwrap();
    out
}

/// Header `epoch,loss`.
pub fn write_train_log(path: &Path, target: &str, losses: &[f64], extra: &[(&str, String)]) -> Result<(), CliError> {
    let mut meta = format!("# {TRAIN_LOG_TAG} v1 target={target}");
    for (k, v) in extra {
        write!(meta, " {k}={v}").unwrap();
    }
    meta.push('\n');
    let mut w = csv::Writer::from_writer(meta.into_bytes());
    w.write_record(["epoch", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// Line chart of the inclusion curve with the full-feature value drawn as a
/// horizontal dotted line.
pub fn curve_svg(method: &str, grid: &[f64], values: &[f64], full: f64) -> String {
    let lo = values.iter().copied().chain([full]).fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().chain([full]).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.1).max(1e-3);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |n: f64| MARGIN + n / 100.0 * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    writeln!(s, r#"<path d="M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}" stroke="black" fill="none"/>"#).unwrap();
    for n in [0.0, 25.0, 50.0, 75.0, 100.0] {
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{n}</text>"#, px(n), y0 + 18.0).unwrap();
    }
    for v in [lo + pad, (lo + hi) / 2.0, hi - pad] {
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{v:.3}</text>"#, x0 - 6.0, py(v) + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">features retained (%)</text>"#, WIDTH / 2.0, HEIGHT - 15.0).unwrap();
    writeln!(s, r#"<text x="15" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {:.2})">mean log-likelihood</text>"#, HEIGHT / 2.0, HEIGHT / 2.0).unwrap();
    writeln!(s, r#"<text x="{:.2}" y="30" font-size="15" text-anchor="middle">{method}</text>"#, WIDTH / 2.0).unwrap();
    writeln!(s, r#"<line x1="{x0:.2}" y1="{:.2}" x2="{x1:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="2 4"/>"#, py(full), py(full)).unwrap();
    let points: Vec<String> = grid.iter().zip(values).map(|(&n, &v)| format!("{:.2},{:.2}", px(n), py(v))).collect();
    writeln!(s, r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#, points.join(" ")).unwrap();
    for (&n, &v) in grid.iter().zip(values) {
        writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(n), py(v)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
