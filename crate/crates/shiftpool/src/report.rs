//! Experiment manifests and CSV/SVG outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shiftpool_core::shift::ShiftReport;
use shiftpool_core::train::EpochRecord;

use crate::error::{Error, Result};
use crate::io::{create_parent, sha256_hex};

/// What a command was asked to do: its name, settings and the content hashes
/// of its inputs. Output locations are not part of it, so the same request
/// written to two places hashes identically.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
}

impl ExperimentManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        ExperimentManifest { command: command.into(), seed, ..Default::default() }
    }

    pub fn setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.insert(key.into(), value.to_string());
        self
    }

    pub fn input(mut self, key: &str, hash: String) -> Self {
        self.inputs.insert(key.into(), hash);
        self
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }

    pub fn header(&self) -> String {
        format!("# manifest sha256={}\n", self.hash())
    }
}

/// A CSV table written after a `# manifest sha256=...` comment line.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(Into::into).collect());
    }

    pub fn render(&self, manifest: &ExperimentManifest) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let body = w.into_inner().map_err(|e| Error::Failed(format!("csv: {e}")))?;
        Ok(manifest.header() + &String::from_utf8(body).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path, manifest: &ExperimentManifest) -> Result<()> {
        create_parent(path)?;
        fs::write(path, self.render(manifest)?).map_err(|e| Error::io(path, e))
    }
}

/// Reads a table written by [`Table::write`], skipping comment lines.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.map(|r| r.iter().map(String::from).collect())).collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

pub fn history_table(history: &[EpochRecord]) -> Table {
    let mut t = Table::new(["epoch", "train_loss", "val_map", "val_loss", "lr"]);
    for h in history {
        t.push([
            h.epoch.to_string(),
            format!("{:.6}", h.train_loss),
            format!("{:.6}", h.val_map),
            format!("{:.6}", h.val_loss),
            format!("{:e}", h.lr),
        ]);
    }
    t
}

pub fn shift_table(report: &ShiftReport) -> Table {
    let mut t = Table::new(["clip_id", "top_class_before", "top_class_after", "abs_change"]);
    for r in &report.per_example {
        t.push([r.clip_id.clone(), r.top_before.to_string(), r.top_after.to_string(), format!("{:.6}", r.abs_change)]);
    }
    t
}

/// One row per protocol magnitude, one consistency and one MAC column per model.
pub fn summary_table(models: &[(String, Vec<ShiftReport>)]) -> Table {
    let mut header = vec!["protocol".to_string()];
    for (name, _) in models {
        header.push(format!("{name}_consistency_pct"));
        header.push(format!("{name}_mac"));
    }
    let mut t = Table::new(header);
    if let Some((_, first)) = models.first() {
        for (i, r) in first.iter().enumerate() {
            let mut row = vec![format!("{}-{}", r.protocol, r.magnitude)];
            for (_, reports) in models {
                row.push(format!("{:.2}", reports[i].consistency_pct));
                row.push(format!("{:.6}", reports[i].mac));
            }
            t.push(row);
        }
    }
    t
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal line chart: one polyline per series over a shared x range.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 56.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 16.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, h / 2.0, h / 2.0, escape(y_label));
    for (v, anchor, x, y) in [(x0, "middle", sx(x0), h - m + 16.0), (x1, "middle", sx(x1), h - m + 16.0)] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, m - 4.0, sy(v) + 4.0);
    }
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, w - m - 120.0, m + 16.0 * i as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
