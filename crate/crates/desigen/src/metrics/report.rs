//! Machine-readable metric reports and their plot/table renderings.

use super::stats;
use crate::error::{DesigenError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ReportMeta {
    pub corpus_id: String,
    pub checkpoint_id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricSeries {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

impl MetricSeries {
    pub fn new(per_sample: Vec<f64>) -> Self {
        let mean = stats::mean(&per_sample);
        let median = stats::median(&per_sample);
        MetricSeries { per_sample, mean, median }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepPoint {
    pub mask_ratio: f64,
    pub mean_salient_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HistogramData {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub median: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub salient_ratio: f64,
    pub occlusion: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub schema_version: u32,
    pub meta: ReportMeta,
    pub metrics: BTreeMap<String, MetricSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_sweep: Option<Vec<SweepPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosine_hist: Option<HistogramData>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<IterationRow>>,
}

impl MetricReport {
    pub fn new(meta: ReportMeta) -> Self {
        MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            meta,
            metrics: BTreeMap::new(),
            mask_sweep: None,
            cosine_hist: None,
            iterations: None,
        }
    }

    pub fn insert(&mut self, name: &str, per_sample: Vec<f64>) {
        self.metrics.insert(name.to_string(), MetricSeries::new(per_sample));
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DesigenError::io(path.display().to_string(), e))?;
        serde_json::from_slice(&bytes).map_err(|e| DesigenError::SchemaViolation {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| DesigenError::io(path.display().to_string(), e))
}

/// Minimal SVG line plot (one polyline over labeled axes).
fn svg_line_plot(points: &[(f64, f64)], x_label: &str, y_label: &str, title: &str) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (mut y0, mut y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    if (y1 - y0).abs() < 1e-12 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut path = String::new();
    for (i, p) in points.iter().enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        path.push_str(&format!("{}{:.2},{:.2} ", cmd, sx(p.0), sy(p.1)));
    }
    let mut circles = String::new();
    for p in points {
        circles.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/>",
            sx(p.0),
            sy(p.1)
        ));
    }
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>",
            "<text x=\"{tx}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>",
            "<line x1=\"{m}\" y1=\"{ybase}\" x2=\"{xend}\" y2=\"{ybase}\" stroke=\"black\"/>",
            "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{ybase}\" stroke=\"black\"/>",
            "<text x=\"{tx}\" y=\"{h2}\" text-anchor=\"middle\" font-size=\"11\">{xl}</text>",
            "<text x=\"14\" y=\"{ty}\" font-size=\"11\" transform=\"rotate(-90 14 {ty})\" text-anchor=\"middle\">{yl}</text>",
            "<path d=\"{path}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>",
            "{circles}</svg>"
        ),
        w = w,
        h = h,
        m = m,
        tx = w / 2.0,
        ty = h / 2.0,
        h2 = h - 12.0,
        ybase = h - m,
        xend = w - m,
        title = title,
        xl = x_label,
        yl = y_label,
        path = path.trim_end(),
        circles = circles,
    )
}

fn svg_histogram(hist: &HistogramData, x_label: &str, title: &str) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let bins = hist.counts.len();
    let max = hist.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let bw = (w - 2.0 * m) / bins as f64;
    let mut bars = String::new();
    for (i, &c) in hist.counts.iter().enumerate() {
        let bh = c as f64 / max * (h - 2.0 * m);
        bars.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f77b4\" stroke=\"white\"/>",
            m + i as f64 * bw,
            h - m - bh,
            bw,
            bh
        ));
    }
    let lo = hist.edges.first().copied().unwrap_or(0.0);
    let hi = hist.edges.last().copied().unwrap_or(1.0);
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>",
            "<text x=\"{tx}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>",
            "<line x1=\"{m}\" y1=\"{ybase}\" x2=\"{xend}\" y2=\"{ybase}\" stroke=\"black\"/>",
            "<text x=\"{m}\" y=\"{h2}\" font-size=\"11\">{lo:.2}</text>",
            "<text x=\"{xend}\" y=\"{h2}\" text-anchor=\"end\" font-size=\"11\">{hi:.2}</text>",
            "<text x=\"{tx}\" y=\"{h2}\" text-anchor=\"middle\" font-size=\"11\">{xl}</text>",
            "{bars}</svg>"
        ),
        w = w,
        h = h,
        m = m,
        tx = w / 2.0,
        h2 = h - 12.0,
        ybase = h - m,
        xend = w - m,
        title = title,
        xl = x_label,
        lo = lo,
        hi = hi,
        bars = bars,
    )
}

fn table_text(rows: &[IterationRow]) -> String {
    let mut out = String::from("iteration  salient_ratio  occlusion\n");
    for r in rows {
        out.push_str(&format!("{:<9}  {:<13.4}  {:<9.4}\n", r.iteration, r.salient_ratio, r.occlusion));
    }
    out
}

/// Writes `report.json` plus any plots/tables the report carries. Returns the
/// list of files written. Byte-identical for identical reports.
pub fn emit_report(report: &MetricReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| DesigenError::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();
    let json_path = out_dir.join("report.json");
    let mut bytes = serde_json::to_vec_pretty(report).map_err(|e| {
        DesigenError::Internal(format!("report serialization failed: {e}"))
    })?;
    bytes.push(b'\n');
    write_bytes(&json_path, &bytes)?;
    written.push(json_path);
    if let Some(sweep) = &report.mask_sweep {
        let pts: Vec<(f64, f64)> =
            sweep.iter().map(|p| (p.mask_ratio, p.mean_salient_ratio)).collect();
        let svg = svg_line_plot(&pts, "mask ratio", "mean salient ratio", "Salient ratio vs mask ratio");
        let p = out_dir.join("mask_sweep.svg");
        write_bytes(&p, svg.as_bytes())?;
        written.push(p);
    }
    if let Some(hist) = &report.cosine_hist {
        let svg = svg_histogram(hist, "cosine similarity", "Attention/saliency cosine similarity");
        let p = out_dir.join("cosine_hist.svg");
        write_bytes(&p, svg.as_bytes())?;
        written.push(p);
    }
    if let Some(rows) = &report.iterations {
        let p = out_dir.join("iterations.txt");
        write_bytes(&p, table_text(rows).as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> MetricReport {
        let mut r = MetricReport::new(ReportMeta {
            corpus_id: "c1".into(),
            checkpoint_id: "ck1".into(),
            seed: 5,
        });
        r.insert("salient_ratio", vec![0.1, 0.2, 0.3]);
        r.mask_sweep = Some(vec![
            SweepPoint { mask_ratio: 0.0, mean_salient_ratio: 0.3 },
            SweepPoint { mask_ratio: 0.5, mean_salient_ratio: 0.2 },
            SweepPoint { mask_ratio: 1.0, mean_salient_ratio: 0.1 },
        ]);
        r
    }

    #[test]
    fn aggregates_match_per_sample() {
        let r = sample_report();
        let s = &r.metrics["salient_ratio"];
        assert!((s.mean - stats::mean(&s.per_sample)).abs() < 1e-9);
        assert!((s.median - stats::median(&s.per_sample)).abs() < 1e-9);
    }

    #[test]
    fn emit_is_deterministic() {
        let r = sample_report();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_report(&r, d1.path()).unwrap();
        emit_report(&r, d2.path()).unwrap();
        let a = std::fs::read(d1.path().join("report.json")).unwrap();
        let b = std::fs::read(d2.path().join("report.json")).unwrap();
        assert_eq!(a, b);
        let back = MetricReport::load(&d1.path().join("report.json")).unwrap();
        assert_eq!(back, r);
        assert!(d1.path().join("mask_sweep.svg").exists());
    }

    #[test]
    fn empty_report_writes_metadata_only() {
        let r = MetricReport::new(ReportMeta::default());
        let d = tempfile::tempdir().unwrap();
        let files = emit_report(&r, d.path()).unwrap();
        assert_eq!(files.len(), 1);
    }
}
