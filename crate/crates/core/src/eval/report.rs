//! Rendering of metric tables as text, markdown, CSV or JSON, and simple
//! line plots of training curves.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::benchmark::{BenchmarkTable, CellMetrics};
use super::metrics::DatasetMetrics;
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::raster::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Markdown,
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Option<Format> {
        match s {
            "text" => Some(Format::Text),
            "markdown" | "md" => Some(Format::Markdown),
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

/// Dataset metrics of one method, one entry per split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub method: String,
    pub splits: Vec<DatasetMetrics>,
}

/// Everything `report` can render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metrics {
    Dataset { rows: Vec<DatasetReport> },
    Insertion { tables: Vec<BenchmarkTable> },
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn cell_label(c: &CellMetrics) -> String {
    format!("{} {:.1}", capitalize(c.shape.name()), c.clearance_mm)
}

fn steps(c: &CellMetrics) -> String {
    c.avg_steps.map_or_else(|| "-".to_string(), |s| format!("{s:.2}"))
}

fn split_of(c: &CellMetrics) -> &'static str {
    Split::of(c.shape).name()
}

/// Rows of cells: header cells then body rows, shared by text and markdown.
fn insertion_grid(tables: &[BenchmarkTable]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["Method".to_string()];
    if let Some(first) = tables.first() {
        for c in &first.cells {
            header.push(format!("{} ({}) Suc", cell_label(c), split_of(c)));
            header.push("Step".to_string());
        }
    }
    let rows = tables
        .iter()
        .map(|t| {
            let mut r = vec![t.method.clone()];
            for c in &t.cells {
                r.push(format!("{:.1}", c.success_rate));
                r.push(steps(c));
            }
            r
        })
        .collect();
    (header, rows)
}

fn dataset_grid(rows: &[DatasetReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["Method".to_string()];
    if let Some(first) = rows.first() {
        for m in &first.splits {
            let s = m.split.name();
            header.extend([
                format!("{s} GCR"),
                format!("{s} L1 x"),
                format!("{s} L1 y"),
                format!("{s} L1 rz"),
            ]);
        }
    }
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.method.clone()];
            for m in &r.splits {
                v.extend([
                    format!("{:.1}", m.gcr),
                    format!("{:.3}", m.l1_x),
                    format!("{:.3}", m.l1_y),
                    format!("{:.3}", m.l1_rz),
                ]);
            }
            v
        })
        .collect();
    (header, body)
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

fn text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut s = line(header) + "\n";
    for r in rows {
        s += &line(r);
        s.push('\n');
    }
    s
}

fn insertion_csv(tables: &[BenchmarkTable]) -> String {
    let mut s = String::from("method,shape,clearance_mm,split,trials,successes,errors,success_rate,avg_steps\n");
    for t in tables {
        for c in &t.cells {
            let _ = writeln!(
                s,
                "{},{},{:.1},{},{},{},{},{:.2},{}",
                t.method,
                c.shape.name(),
                c.clearance_mm,
                split_of(c),
                c.trials,
                c.successes,
                c.errors,
                c.success_rate,
                c.avg_steps.map_or_else(String::new, |v| format!("{v:.4}")),
            );
        }
    }
    s
}

fn dataset_csv(rows: &[DatasetReport]) -> String {
    let mut s = String::from("method,split,samples,gcr,l1_x,l1_y,l1_rz\n");
    for r in rows {
        for m in &r.splits {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.6},{:.6},{:.6}",
                r.method,
                m.split.name(),
                m.samples,
                m.gcr,
                m.l1_x,
                m.l1_y,
                m.l1_rz
            );
        }
    }
    s
}

/// Renders metrics deterministically in the requested format.
pub fn report(metrics: &Metrics, format: Format) -> Result<String> {
    if format == Format::Json {
        return Ok(serde_json::to_string_pretty(metrics)? + "\n");
    }
    let (header, rows) = match metrics {
        Metrics::Dataset { rows } => dataset_grid(rows),
        Metrics::Insertion { tables } => insertion_grid(tables),
    };
    Ok(match format {
        Format::Text => text(&header, &rows),
        Format::Markdown => markdown(&header, &rows),
        Format::Csv => match metrics {
            Metrics::Dataset { rows } => dataset_csv(rows),
            Metrics::Insertion { tables } => insertion_csv(tables),
        },
        Format::Json => unreachable!("handled above"),
    })
}

const PLOT_COLORS: [[f32; 3]; 4] = [
    [0.12, 0.47, 0.71],
    [0.84, 0.15, 0.16],
    [0.17, 0.63, 0.17],
    [0.58, 0.40, 0.74],
];

/// Line plot of one or more series on shared axes, written as PNG. No
/// labels; the caller records what each color means.
pub fn plot_series(path: &Path, series: &[&[f64]], width: usize, height: usize) -> Result<()> {
    let finite = series.iter().flat_map(|s| s.iter()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || width < 16 || height < 16 {
        return Err(Error::Config("nothing to plot".into()));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(width, height);
    img.data.iter_mut().for_each(|v| *v = 1.0);
    let margin = 8;
    let (pw, ph) = (width - 2 * margin, height - 2 * margin);
    for x in margin..width - margin {
        img.put(x, height - margin, [0.0; 3]);
    }
    for y in margin..=height - margin {
        img.put(margin, y, [0.0; 3]);
    }
    for (k, s) in series.iter().enumerate() {
        let color = PLOT_COLORS[k % PLOT_COLORS.len()];
        let n = s.len().max(2) - 1;
        let to_px = |i: usize, v: f64| {
            let x = margin as f64 + pw as f64 * i as f64 / n as f64;
            let y = (height - margin) as f64 - ph as f64 * (v - lo) / span;
            (x, y)
        };
        for i in 1..s.len() {
            if !(s[i - 1].is_finite() && s[i].is_finite()) {
                continue;
            }
            let (x0, y0) = to_px(i - 1, s[i - 1]);
            let (x1, y1) = to_px(i, s[i]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for t in 0..=steps {
                let f = t as f64 / steps as f64;
                let x = (x0 + f * (x1 - x0)).round() as usize;
                let y = (y0 + f * (y1 - y0)).round() as usize;
                if x < width && y < height {
                    img.put(x, y, color);
                }
            }
        }
    }
    img.write_png(path)
}
