use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{FinalMetrics, RunReport, VariantReport};
use crate::error::{Error, Result};
use crate::oracle::{relative_gap, OracleResult};
use crate::quantize::Quantizer;
use crate::solver::IterTrace;

pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "gap.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub label: String,
    #[serde(flatten)]
    pub quantizer: Quantizer,
    pub alpha: f64,
    pub iterations: usize,
    pub trace_file: String,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub worst_imbalance: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub oracle: OracleResult,
    pub variants: Vec<VariantSummary>,
}

pub fn trace_file_name(label: &str) -> String {
    format!("{label}.csv")
}

pub fn summarize(report: &RunReport) -> Summary {
    Summary {
        config: report.config.clone(),
        oracle: report.oracle.clone(),
        variants: report
            .variants
            .iter()
            .map(|v| VariantSummary {
                label: v.label.clone(),
                quantizer: v.quantizer,
                alpha: v.alpha,
                iterations: v.traces.len(),
                trace_file: trace_file_name(&v.label),
                final_metrics: v.final_metrics,
                worst_imbalance: v.worst_imbalance,
                wall_clock_secs: v.wall_clock_secs,
            })
            .collect(),
    }
}

/// Writes `iter,cost,gap,consensus_residual,tracking_residual`, one row per
/// round.
pub fn write_trace_csv(path: &Path, traces: &[IterTrace]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for t in traces {
        w.serialize(t).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one CSV per variant, the summary and optionally an SVG plot of the
/// relative gap. Returns the paths written.
pub fn write_outputs(report: &RunReport, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for v in &report.variants {
        let path = dir.join(trace_file_name(&v.label));
        write_trace_csv(&path, &v.traces)?;
        written.push(path);
    }
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summarize(report)).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    if svg {
        let path = dir.join(PLOT_FILE);
        fs::write(&path, gap_plot(&report.variants, report.oracle.f_star)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-scale relative gap against iteration, one polyline per variant.
pub fn gap_plot(variants: &[VariantReport], f_star: f64) -> String {
    let (w, h, pad) = (720.0, 440.0, 60.0);
    let floor = 1e-16f64;
    let series: Vec<Vec<(f64, f64)>> = variants
        .iter()
        .map(|v| {
            let stride = (v.traces.len() / 1000).max(1);
            v.traces
                .iter()
                .step_by(stride)
                .filter_map(|t| t.gap.map(|g| (t.iter as f64, relative_gap(g, f_star).max(floor).log10())))
                .collect()
        })
        .collect();
    let pts = series.iter().flatten();
    let x_max = pts.clone().map(|p| p.0).fold(1.0, f64::max);
    let y_lo = pts.clone().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
    let y_hi = pts.map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
    let (y_lo, y_hi) = if y_lo.is_finite() && y_hi > y_lo { (y_lo, y_hi) } else { (-1.0, 0.0) };
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_lo) / (y_hi - y_lo) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for e in (y_lo as i32)..=(y_hi as i32) {
        let y = sy(e as f64);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1e{e}</text>"#, pad - 6.0, y + 4.0);
        let _ = writeln!(s, r##"<line x1="{pad}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/>"##, w - pad);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration (max {x_max})</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">relative gap</text>"#, h / 2.0, h / 2.0);
    for (k, (v, pts)) in variants.iter().zip(&series).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, d.join(" "));
        let ly = pad + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#, w - pad - 6.0, v.label);
    }
    s.push_str("</svg>\n");
    s
}
