//! SVG reports from metrics logs: accuracy-vs-round curves and a bar chart of
//! the stability statistic over the trailing window.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{stability_std, MetricsRecord};
use crate::experiment::{read_metrics_log, CONFIG_FILE};

pub const ACCURACY_PLOT: &str = "accuracy.svg";
pub const STABILITY_PLOT: &str = "stability.svg";
pub const STABILITY_TABLE: &str = "stability.csv";

/// Trailing fraction of rounds covered by the stability bars.
pub const STABILITY_FRACTION: f64 = 0.25;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// A parsed log with its legend label.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub records: Vec<MetricsRecord>,
}

impl Series {
    pub fn stability_window(&self) -> usize {
        ((STABILITY_FRACTION * self.records.len() as f64).ceil() as usize).max(1)
    }

    pub fn stability(&self) -> Result<f64> {
        let acc: Vec<f64> = self.records.iter().map(|r| r.accuracy).collect();
        stability_std(&acc, self.stability_window())
    }
}

/// Legend label: the method named in a sibling config file, qualified by the
/// run directory, or the directory name alone.
fn label_for(path: &Path) -> String {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir_name = dir
        .and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
    let method = dir
        .map(|d| d.join(CONFIG_FILE))
        .filter(|c| c.exists())
        .and_then(|c| RunConfig::load(c).ok())
        .map(|c| c.method.as_str());
    match method {
        Some(m) if m != dir_name => format!("{m} ({dir_name})"),
        Some(m) => m.to_string(),
        None => dir_name,
    }
}

pub fn load_series(paths: &[PathBuf]) -> Result<Vec<Series>> {
    if paths.is_empty() {
        return Err(Error::Precondition("no metrics logs given".into()));
    }
    paths
        .iter()
        .map(|p| {
            Ok(Series {
                label: label_for(p),
                records: read_metrics_log(p)?,
            })
        })
        .collect()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn svg_open(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / 2.0,
        escape(title)
    )
    .unwrap();
}

fn plot_area() -> (f64, f64, f64, f64) {
    (
        MARGIN_LEFT,
        MARGIN_TOP,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
    )
}

fn y_axis(out: &mut String, max: f64, label: &str) {
    let (x0, y0, w, h) = plot_area();
    for i in 0..=5 {
        let v = max * i as f64 / 5.0;
        let y = y0 + h - h * i as f64 / 5.0;
        writeln!(
            out,
            r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            x0 + w
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{label}</text>"#,
        y0 + h / 2.0,
        y0 + h / 2.0
    )
    .unwrap();
    writeln!(out, r#"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="black"/>"#).unwrap();
}

fn legend(out: &mut String, labels: &[&str]) {
    let (x0, y0, w, _) = plot_area();
    let lx = x0 + w + 12.0;
    for (i, label) in labels.iter().enumerate() {
        let y = y0 + 10.0 + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        writeln!(
            out,
            r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/>"#,
            y - 10.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{y:.1}">{}</text>"#,
            lx + 18.0,
            escape(label)
        )
        .unwrap();
    }
}

/// Accuracy against round, one polyline per series.
pub fn accuracy_svg(series: &[Series]) -> String {
    let mut out = String::new();
    svg_open(&mut out, "Test accuracy per round");
    let (x0, y0, w, h) = plot_area();
    let max_round = series
        .iter()
        .flat_map(|s| s.records.iter().map(|r| r.round))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    y_axis(&mut out, 1.0, "accuracy");
    for i in 0..=4 {
        let round = (max_round * i as f64 / 4.0).round();
        let x = x0 + w * round / max_round;
        writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{round}</text>"#,
            y0 + h + 16.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round</text>"#,
        x0 + w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    for (i, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .records
            .iter()
            .map(|r| {
                format!(
                    "{:.2},{:.2}",
                    x0 + w * r.round as f64 / max_round,
                    y0 + h - h * r.accuracy.clamp(0.0, 1.0)
                )
            })
            .collect();
        writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            points.join(" ")
        )
        .unwrap();
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// One bar per series with its stability statistic.
pub fn stability_svg(labels: &[&str], values: &[f64]) -> String {
    let mut out = String::new();
    svg_open(
        &mut out,
        "Accuracy standard deviation over the last quarter of rounds",
    );
    let (x0, y0, w, h) = plot_area();
    let max = values.iter().copied().fold(0.0, f64::max);
    let max = if max > 0.0 { max * 1.1 } else { 1.0 };
    y_axis(&mut out, max, "std");
    let slot = w / values.len().max(1) as f64;
    for (i, &v) in values.iter().enumerate() {
        let bh = h * v / max;
        writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}"/>"#,
            x0 + slot * (i as f64 + 0.2),
            y0 + h - bh,
            slot * 0.6,
            PALETTE[i % PALETTE.len()]
        )
        .unwrap();
    }
    legend(&mut out, labels);
    out.push_str("</svg>\n");
    out
}

/// Writes the accuracy plot, the stability plot and a `label,window,std`
/// table of the plotted stability values. Returns the files written.
pub fn emit_plots(logs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let series = load_series(logs)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| -> Result<PathBuf> {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };

    let mut written = vec![write(ACCURACY_PLOT, accuracy_svg(&series))?];
    let nonempty: Vec<&Series> = series.iter().filter(|s| !s.records.is_empty()).collect();
    if !nonempty.is_empty() {
        let values = nonempty
            .iter()
            .map(|s| s.stability())
            .collect::<Result<Vec<f64>>>()?;
        let labels: Vec<&str> = nonempty.iter().map(|s| s.label.as_str()).collect();
        let mut table = String::from("label,window,std\n");
        for (s, v) in nonempty.iter().zip(&values) {
            writeln!(
                table,
                "{},{},{}",
                s.label.replace(',', ";"),
                s.stability_window(),
                v
            )
            .unwrap();
        }
        written.push(write(STABILITY_PLOT, stability_svg(&labels, &values))?);
        written.push(write(STABILITY_TABLE, table)?);
    }
    Ok(written)
}
