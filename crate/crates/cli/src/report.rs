//! Figures (hand-written SVG) and their companion CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use debias_core::ablation::ExternalTestResult;
use debias_core::corpus::DatasetManifest;
use debias_core::metrics::stable_threshold;
use debias_core::pruner::PruneLog;
use debias_core::{CoreError, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

/// Plot frame with y in `[0, 1]` and x in `[0, x_max]`.
struct Frame {
    x_max: f64,
    svg: String,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x_max: f64) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
        let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
        let _ = writeln!(svg, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
        let mut f = Self { x_max: x_max.max(1.0), svg };
        for i in 0..=5 {
            let v = i as f64 / 5.0;
            let y = f.y(v);
            let _ = writeln!(f.svg, r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/>"##);
            let _ = writeln!(f.svg, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, y + 4.0);
        }
        let ticks = (f.x_max as usize).min(10).max(1);
        for i in 0..=ticks {
            let v = (f.x_max * i as f64 / ticks as f64).round();
            let _ = writeln!(f.svg, r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#, f.x(v), y0 + 16.0);
        }
        let _ = writeln!(f.svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label));
        let _ = writeln!(
            f.svg,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        f
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + v / self.x_max * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - v.clamp(0.0, 1.0) * (H - BOTTOM - TOP)
    }

    fn hline(&mut self, v: f64, colour: &str) {
        let y = self.y(v);
        let _ = writeln!(
            self.svg,
            r#"<line class="ref" x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="{colour}" stroke-dasharray="6 4"/>"#,
            W - RIGHT
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn csv_path(out: &Path) -> std::path::PathBuf {
    out.with_extension("csv")
}

/// Mean AUC with a one-standard-deviation band against pruned count, a dashed
/// target line and a marker where the series becomes stable. Writes `out`
/// and a CSV beside it.
pub fn render_auc_curve(log: &PruneLog, target: f64, out: &Path) -> Result<()> {
    if log.rounds.is_empty() {
        return Err(CoreError::Argument("prune log has no rounds".into()));
    }
    let mean = log.auc_series();
    let std: Vec<f64> = log.rounds.iter().map(|r| r.auc_std).collect();
    let stable = stable_threshold(&mean, target);
    let mut f = Frame::new(
        &format!("Mean AUC vs pruned images (target {target})"),
        "pruned images",
        "AUC",
        (mean.len() - 1) as f64,
    );
    let upper: Vec<String> = mean.iter().zip(&std).enumerate().map(|(i, (m, s))| format!("{},{}", f.x(i as f64), f.y(m + s))).collect();
    let lower: Vec<String> = mean.iter().zip(&std).enumerate().rev().map(|(i, (m, s))| format!("{},{}", f.x(i as f64), f.y(m - s))).collect();
    let _ = writeln!(f.svg, r##"<polygon class="band" points="{} {}" fill="#9ecae1" opacity="0.5"/>"##, upper.join(" "), lower.join(" "));
    let line: Vec<String> = mean.iter().enumerate().map(|(i, m)| format!("{},{}", f.x(i as f64), f.y(*m))).collect();
    let _ = writeln!(f.svg, r##"<polyline class="mean" points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##, line.join(" "));
    for (i, m) in mean.iter().enumerate() {
        let _ = writeln!(f.svg, r##"<circle class="point" cx="{}" cy="{}" r="2.5" fill="#08519c"/>"##, f.x(i as f64), f.y(*m));
    }
    f.hline(target, "#d62728");
    if let Some(s) = stable {
        let (x, y) = (f.x(s as f64), f.y(mean[s]));
        let _ = writeln!(f.svg, r##"<circle class="stable" cx="{x}" cy="{y}" r="6" fill="none" stroke="#d62728" stroke-width="2"/>"##);
        let _ = writeln!(f.svg, r##"<text x="{x}" y="{}" text-anchor="middle" fill="#d62728">stable at {s}</text>"##, y - 10.0);
    }
    write(out, &f.finish())?;

    let mut csv = String::from("pruned_count,auc_mean,auc_std,target,stable\n");
    for (i, (m, s)) in mean.iter().zip(&std).enumerate() {
        let _ = writeln!(csv, "{i},{m},{s},{target},{}", stable == Some(i));
    }
    write(&csv_path(out), &csv)
}

/// Probability against image index for every included external image, with
/// the 0.5 line; the title carries the accuracy.
pub fn render_scatter(result: &ExternalTestResult, out: &Path) -> Result<()> {
    let points: Vec<(&str, f64, bool)> = result
        .rows
        .iter()
        .filter_map(|r| r.probability.map(|p| (r.id.as_str(), p, r.label.is_nodule())))
        .collect();
    if points.is_empty() {
        return Err(CoreError::Argument("no included external images to plot".into()));
    }
    let mut f = Frame::new(
        &format!("External test: accuracy {:.3} ({} images)", result.accuracy, points.len()),
        "image index",
        "nodule probability",
        (points.len() - 1) as f64,
    );
    f.hline(0.5, "#555");
    for (i, &(_, p, nodule)) in points.iter().enumerate() {
        let colour = if nodule { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(f.svg, r#"<circle class="point" cx="{}" cy="{}" r="3" fill="{colour}"/>"#, f.x(i as f64), f.y(p));
    }
    write(out, &f.finish())?;

    let mut csv = String::from("index,id,probability,nodule\n");
    for (i, (id, p, nodule)) in points.iter().enumerate() {
        let _ = writeln!(csv, "{i},{id},{p},{nodule}");
    }
    write(&csv_path(out), &csv)
}

fn title_case(snake: &str) -> String {
    snake
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// The first `top_n` pruned ids with their manifest metadata, as CSV.
pub fn report_pruned_records(log: &PruneLog, manifest: &DatasetManifest, top_n: usize, out: &Path) -> Result<()> {
    if top_n > log.prune_list.len() {
        return Err(CoreError::Argument(format!(
            "asked for {top_n} records but only {} were pruned",
            log.prune_list.len()
        )));
    }
    let mut csv = String::from("rank,id,subtlety,size_mm,center_x,center_y,description\n");
    for (rank, id) in log.prune_list.iter().take(top_n).enumerate() {
        let rec = manifest
            .get(id)
            .ok_or_else(|| CoreError::Argument(format!("pruned id `{id}` is not in the manifest")))?;
        let subtlety = rec.subtlety.map(|s| title_case(s.as_str())).unwrap_or_default();
        let size = rec.nodule_size_mm.map(|s| s.to_string()).unwrap_or_default();
        let (cx, cy) = rec.nodule_center.map(|(x, y)| (x.to_string(), y.to_string())).unwrap_or_default();
        let mut desc = subtlety.clone();
        if let Some(s) = rec.nodule_size_mm {
            let _ = write!(desc, " {s} mm");
        }
        if let Some((x, y)) = rec.nodule_center {
            let _ = write!(desc, " ({x},{y})");
        }
        let _ = writeln!(csv, "{},{id},{subtlety},{size},{cx},{cy},\"{}\"", rank + 1, desc.trim());
    }
    write(out, &csv)
}
