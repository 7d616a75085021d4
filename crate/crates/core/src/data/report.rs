//! CSV and SVG reports. All numbers are written with five decimals so that
//! identical runs give identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::metrics::{summarize, MetricsReport};
use crate::train::EpochLog;

const METRIC_COLUMNS: &str = "accuracy,precision,recall,f1";

fn row(out: &mut String, key: &str, values: [f64; 4]) {
    let _ = writeln!(
        out,
        "{key},{:.5},{:.5},{:.5},{:.5}",
        values[0], values[1], values[2], values[3]
    );
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-fold metrics plus `mean` and `stddev` footer rows.
pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("write_metrics_csv", "no reports"));
    }
    let mut out = format!("fold,{METRIC_COLUMNS}\n");
    for (name, r) in rows {
        row(&mut out, name, r.values());
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| *r).collect();
    let summary = summarize(&reports)?;
    row(&mut out, "mean", summary.mean);
    row(&mut out, "stddev", summary.stddev);
    Ok(out)
}

pub fn write_metrics_csv(rows: &[(String, MetricsReport)], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), metrics_csv(rows)?)
}

/// One row per architecture, no footer.
pub fn comparison_csv(rows: &[(String, MetricsReport)]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("write_comparison_csv", "no reports"));
    }
    let mut out = format!("arch,{METRIC_COLUMNS}\n");
    for (name, r) in rows {
        row(&mut out, name, r.values());
    }
    Ok(out)
}

pub fn write_comparison_csv(rows: &[(String, MetricsReport)], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), comparison_csv(rows)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.5}")).unwrap_or_default()
}

/// Epoch history; validation columns are blank when no holdout was used.
/// Wall-clock time is left out so the file stays reproducible.
pub fn epochs_csv(logs: &[EpochLog]) -> Result<String> {
    if logs.is_empty() {
        return Err(Error::invalid("write_epochs_csv", "no epochs"));
    }
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for l in logs {
        let _ = writeln!(
            out,
            "{},{:.5},{:.5},{},{}",
            l.epoch,
            l.train_loss,
            l.train_acc,
            opt(l.val_loss),
            opt(l.val_acc)
        );
    }
    Ok(out)
}

pub fn write_epochs_csv(logs: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), epochs_csv(logs)?)
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 40.0;

fn polyline(out: &mut String, x0: f64, points: &[(f64, f64)], y_max: f64, n: usize, style: &str) {
    if points.is_empty() {
        return;
    }
    let span = (n.max(2) - 1) as f64;
    let coords: Vec<String> = points
        .iter()
        .map(|&(i, v)| {
            let x = x0 + PANEL_W * i / span;
            let y = MARGIN + PANEL_H * (1.0 - v / y_max);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        "  <polyline fill=\"none\" stroke-width=\"2\" {style} points=\"{}\"/>",
        coords.join(" ")
    );
}

fn panel(out: &mut String, x0: f64, title: &str, train: &[(f64, f64)], val: &[(f64, f64)], n: usize) {
    let y_max = train
        .iter()
        .chain(val)
        .map(|&(_, v)| v)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let (x1, y1) = (x0 + PANEL_W, MARGIN + PANEL_H);
    let _ = writeln!(out, "  <g>");
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{title}</text>",
        x0 + PANEL_W / 2.0,
        MARGIN - 12.0
    );
    let _ = writeln!(
        out,
        "  <path d=\"M{x0:.2},{MARGIN:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}\" stroke=\"black\" fill=\"none\"/>"
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{y_max:.5}</text>",
        x0 - 4.0,
        MARGIN + 4.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{x1:.2}\" y=\"{:.2}\" text-anchor=\"end\">epoch {n}</text>",
        y1 + 16.0
    );
    polyline(out, x0, train, y_max, n, "stroke=\"#1f77b4\" class=\"train\"");
    polyline(out, x0, val, y_max, n, "stroke=\"#d62728\" stroke-dasharray=\"6 3\" class=\"validation\"");
    let _ = writeln!(out, "  </g>");
}

/// Two charts side by side: loss and accuracy per epoch, training solid,
/// validation dashed.
pub fn curves_svg(logs: &[EpochLog]) -> Result<String> {
    if logs.is_empty() {
        return Err(Error::invalid("write_curves_svg", "no epochs"));
    }
    let series = |f: &dyn Fn(&EpochLog) -> Option<f64>| -> Vec<(f64, f64)> {
        logs.iter()
            .enumerate()
            .filter_map(|(i, l)| f(l).map(|v| (i as f64, v)))
            .collect()
    };
    let width = 3.0 * MARGIN + 2.0 * PANEL_W;
    let height = 2.0 * MARGIN + PANEL_H + 20.0;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let n = logs.len();
    panel(
        &mut out,
        MARGIN,
        "loss",
        &series(&|l| Some(l.train_loss)),
        &series(&|l| l.val_loss),
        n,
    );
    panel(
        &mut out,
        2.0 * MARGIN + PANEL_W,
        "accuracy",
        &series(&|l| Some(l.train_acc)),
        &series(&|l| l.val_acc),
        n,
    );
    let _ = writeln!(
        out,
        "  <text x=\"{MARGIN:.2}\" y=\"{:.2}\" fill=\"#1f77b4\">train</text>",
        height - 6.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"{:.2}\" fill=\"#d62728\">validation</text>",
        MARGIN + 60.0,
        height - 6.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_curves_svg(logs: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), curves_svg(logs)?)
}
