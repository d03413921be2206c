//! On-disk artifacts for an [`EvalReport`]: JSON, CSV tables and SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::report::EvalReport;
use crate::error::{Error, Result};

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Unit-square axes with ticks every 0.2.
fn axes(out: &mut String, xlabel: &str, ylabel: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN * 2.5, MARGIN);
    let _ = writeln!(out, r#"<path d="M{x0},{y1} V{y0} H{x1}" stroke="black" fill="none"/>"#);
    for k in 0..=5 {
        let t = k as f64 / 5.0;
        let x = x0 + t * (x1 - x0);
        let y = y0 - t * (y0 - y1);
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{t:.1}</text>"#, y0 + 14.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{t:.1}</text>"#, x0 - 4.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn legend(out: &mut String, entries: &[String]) {
    let x = WIDTH - MARGIN * 2.3;
    for (k, name) in entries.iter().enumerate() {
        let y = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(name));
    }
}

/// Precision-recall curves, one polyline per class with ground truth.
pub fn pr_curves_svg(report: &EvalReport, title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    axes(&mut out, "recall", "precision");
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN * 2.5, MARGIN);
    let mut names = Vec::new();
    for (k, class) in report.classes.iter().filter(|c| c.ap.is_some()).enumerate() {
        let mut path = String::new();
        for (n, p) in class.pr_curve.iter().enumerate() {
            let x = x0 + p.recall * (x1 - x0);
            let y = y0 - p.precision * (y0 - y1);
            let _ = write!(path, "{}{x:.2},{y:.2}", if n == 0 { "M" } else { " L" });
        }
        if !path.is_empty() {
            let _ = writeln!(
                out,
                r#"<path d="{path}" stroke="{}" fill="none" stroke-width="1.5"/>"#,
                PALETTE[k % PALETTE.len()]
            );
        }
        names.push(format!("{} (AP {:.3})", class.name, class.ap.unwrap_or(0.0)));
    }
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart of values in `[0, 1]`: one group per category, one bar per series.
pub fn bar_chart_svg(title: &str, ylabel: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN * 2.5, MARGIN);
    let _ = writeln!(out, r#"<path d="M{x0},{y1} V{y0} H{x1}" stroke="black" fill="none"/>"#);
    for k in 0..=5 {
        let t = k as f64 / 5.0;
        let y = y0 - t * (y0 - y1);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{t:.1}</text>"#, x0 - 4.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
    let slot = (x1 - x0) / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let left = x0 + slot * c as f64 + slot * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let h = v * (y0 - y1);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
                left + bar * s as f64,
                y0 - h,
                bar,
                PALETTE[s % PALETTE.len()]
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            left + slot * 0.4,
            y0 + 14.0,
            escape(cat)
        );
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

pub fn confusion_csv(report: &EvalReport) -> String {
    let names: Vec<&str> = report.classes.iter().map(|c| c.name.as_str()).chain(["background"]).collect();
    let mut out = format!("gt\\pred,{}\n", names.join(","));
    for (row, counts) in report.confusion.counts.iter().enumerate() {
        let cells: Vec<String> = counts.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{},{}", names[row], cells.join(","));
    }
    out
}

pub fn pr_csv(report: &EvalReport, class_id: usize) -> String {
    let mut out = String::from("confidence,recall,precision\n");
    if let Some(class) = report.class(class_id) {
        for p in &class.pr_curve {
            let _ = writeln!(out, "{},{},{}", p.confidence, p.recall, p.precision);
        }
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `confusion.csv`, `pr/class_<id>.csv`, `pr_curves.svg`
/// and `per_class.svg` under `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    let pr_dir = dir.join("pr");
    fs::create_dir_all(&pr_dir).map_err(|e| Error::io(&pr_dir, e))?;
    write(&dir.join("report.json"), &serde_json::to_string_pretty(report)?)?;
    write(&dir.join("confusion.csv"), &confusion_csv(report))?;
    for class in &report.classes {
        write(&pr_dir.join(format!("class_{}.csv", class.class_id)), &pr_csv(report, class.class_id))?;
    }
    write(&dir.join("pr_curves.svg"), &pr_curves_svg(report, "Precision-recall at IoU 0.5"))?;
    let categories: Vec<String> = report.classes.iter().map(|c| c.name.clone()).collect();
    let series = vec![
        ("AP@0.5".to_string(), report.classes.iter().map(|c| c.ap.unwrap_or(0.0)).collect()),
        (
            format!("recall@{}", report.conf_threshold),
            report.classes.iter().map(|c| c.recall.unwrap_or(0.0)).collect(),
        ),
        (
            "background rate".to_string(),
            report.classes.iter().map(|c| c.background_rate.unwrap_or(0.0)).collect(),
        ),
    ];
    write(&dir.join("per_class.svg"), &bar_chart_svg("Per-class metrics", "value", &categories, &series))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
