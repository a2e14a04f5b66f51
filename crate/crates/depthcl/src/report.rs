//! Aggregate tables, progression plots and raw record dumps for a set of
//! run directories. Output bytes depend only on the runs' records and
//! configs, so regenerating a report reproduces it exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use depthcl_core::metrics::{avg_forgetting, avg_performance, spto, EvalRecord, Metric, SptoNorm};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::harness::load_run;
use crate::record::encode_record;

pub const TABLE_CSV: &str = "summary.csv";
pub const TABLE_JSON: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Forgetting,
    Performance,
    Spto,
}

impl Aggregate {
    pub const ALL: [Aggregate; 3] = [Aggregate::Forgetting, Aggregate::Performance, Aggregate::Spto];

    pub fn name(self) -> &'static str {
        match self {
            Self::Forgetting => "forgetting",
            Self::Performance => "performance",
            Self::Spto => "spto",
        }
    }

    fn unit(self, metric: Metric) -> &'static str {
        match self {
            Self::Forgetting => "pct",
            _ => match metric {
                Metric::Mae | Metric::Rmse => "mm",
                Metric::Imae | Metric::Irmse => "per_km",
            },
        }
    }
}

/// The 3 x 4 aggregate table of one run; `None` marks a value that is
/// undefined (a single dataset has no forgetting) or not yet available.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run: String,
    pub strategy: String,
    pub datasets: Vec<String>,
    pub complete: bool,
    pub spto_norm: String,
    pub forgetting: MetricRow,
    pub performance: MetricRow,
    pub spto: MetricRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub imae: Option<f64>,
    pub irmse: Option<f64>,
}

impl MetricRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
            Metric::Imae => self.imae,
            Metric::Irmse => self.irmse,
        }
    }

    fn from_fn(f: impl Fn(Metric) -> Option<f64>) -> Self {
        Self {
            mae: f(Metric::Mae),
            rmse: f(Metric::Rmse),
            imae: f(Metric::Imae),
            irmse: f(Metric::Irmse),
        }
    }
}

impl RunSummary {
    pub fn row(&self, a: Aggregate) -> &MetricRow {
        match a {
            Aggregate::Forgetting => &self.forgetting,
            Aggregate::Performance => &self.performance,
            Aggregate::Spto => &self.spto,
        }
    }

    /// The 12 table cells, aggregate-major.
    pub fn cells(&self) -> Vec<Option<f64>> {
        Aggregate::ALL
            .iter()
            .flat_map(|&a| Metric::ALL.iter().map(move |&m| self.row(a).get(m)))
            .collect()
    }
}

pub fn summarize(run: &str, strategy: &str, datasets: &[String], record: &EvalRecord, norm: SptoNorm) -> RunSummary {
    let tri = |m: Metric| record.triangle(m).ok();
    let row = |f: &dyn Fn(&[Vec<f64>]) -> Option<f64>| MetricRow::from_fn(|m| tri(m).and_then(|t| f(&t)));
    RunSummary {
        run: run.to_string(),
        strategy: strategy.to_string(),
        datasets: datasets.to_vec(),
        complete: record.is_complete(),
        spto_norm: match norm {
            SptoNorm::Sum => "sum",
            SptoNorm::Mean => "mean",
        }
        .to_string(),
        forgetting: row(&|t| avg_forgetting(t).ok()),
        performance: row(&|t| avg_performance(t).ok()),
        spto: row(&|t| spto(t, norm).ok()),
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_default()
}

pub fn table_csv(summaries: &[RunSummary]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run".to_string(), "strategy".into(), "datasets".into(), "complete".into()];
    for a in Aggregate::ALL {
        for m in Metric::ALL {
            header.push(format!("{}_{}_{}", a.name(), m.name(), a.unit(m)));
        }
    }
    let csv_err = |e: csv::Error| Error::Config(format!("writing summary table: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for s in summaries {
        let mut row = vec![s.run.clone(), s.strategy.clone(), s.datasets.join("|"), s.complete.to_string()];
        row.extend(s.cells().into_iter().map(fmt_cell));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("writing summary table: {e}")))
}

const COLORS: [&str; 8] = ["#1b6ca8", "#d1495b", "#edae49", "#00798c", "#66a182", "#8d5a97", "#30638e", "#a4243b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Per-dataset metric values against training progress, one panel per
/// metric. Missing record entries are left out of the polylines.
pub fn progression_svg(title: &str, datasets: &[String], record: &EvalRecord) -> String {
    let n = record.datasets();
    let (pw, ph, margin) = (360.0, 220.0, 48.0);
    let width = 2.0 * (pw + margin) + margin;
    let height = 2.0 * (ph + margin) + margin + 40.0 + 18.0 * n as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{margin}" y="24" font-size="14">{}</text>"#, esc(title));
    for (pi, &metric) in Metric::ALL.iter().enumerate() {
        let x0 = margin + (pi % 2) as f64 * (pw + margin);
        let y0 = 40.0 + margin / 2.0 + (pi / 2) as f64 * (ph + margin);
        let values: Vec<f64> = record.entries().map(|(_, _, m)| m.get(metric)).collect();
        let (lo, hi) = match values.iter().copied().fold(None, |acc: Option<(f64, f64)>, v| {
            Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v))))
        }) {
            Some((a, b)) if b > a => (a - 0.05 * (b - a), b + 0.05 * (b - a)),
            Some((a, _)) => (a - 0.5 * a.abs().max(1.0), a + 0.5 * a.abs().max(1.0)),
            None => (0.0, 1.0),
        };
        let px = |k: usize| x0 + if n > 1 { pw * k as f64 / (n - 1) as f64 } else { pw / 2.0 };
        let py = |v: f64| y0 + ph - ph * (v - lo) / (hi - lo);
        let _ = writeln!(s, r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##);
        let _ = writeln!(s, r#"<text x="{x0}" y="{:.1}">{} ({})</text>"#, y0 - 6.0, metric.name(), metric.unit());
        for (t, v) in [(0.0, hi), (1.0, lo)] {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, x0 - 4.0, y0 + t * ph + 4.0);
        }
        for k in 0..n {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                px(k),
                y0 + ph + 14.0,
                k + 1
            );
        }
        for j in 0..n {
            let color = COLORS[j % COLORS.len()];
            let pts: Vec<(f64, f64)> = (j..n)
                .filter_map(|k| record.get(j, k).map(|m| (px(k), py(m.get(metric)))))
                .collect();
            if pts.len() > 1 {
                let line: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
            }
            for (x, y) in pts {
                let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{color}"/>"#);
            }
        }
    }
    let ly = 40.0 + 2.0 * (ph + margin) + margin / 2.0;
    let _ = writeln!(s, r#"<text x="{margin}" y="{ly:.1}">x: number of datasets trained; one line per evaluated dataset</text>"#);
    for j in 0..n {
        let y = ly + 18.0 * (j + 1) as f64;
        let name = datasets.get(j).map(String::as_str).unwrap_or("?");
        let _ = writeln!(s, r#"<rect x="{margin}" y="{:.1}" width="10" height="10" fill="{}"/>"#, y - 9.0, COLORS[j % COLORS.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, margin + 16.0, esc(&format!("{}: {name}", j + 1)));
    }
    s.push_str("</svg>\n");
    s
}

/// File-name-safe, unique stems for the runs.
fn stems(labels: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    labels
        .iter()
        .map(|l| {
            let base: String = l
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
                .collect();
            let base = if base.is_empty() { "run".to_string() } else { base };
            let mut stem = base.clone();
            let mut i = 2;
            while !seen.insert(stem.clone()) {
                stem = format!("{base}-{i}");
                i += 1;
            }
            stem
        })
        .collect()
}

/// Writes the summary table (CSV and JSON) plus a progression plot and a raw
/// record dump per run into `out`. Returns the written paths.
pub fn write_report(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut loaded = Vec::new();
    for dir in runs {
        loaded.push(load_run(dir)?);
    }
    let labels: Vec<String> = loaded.iter().map(|(m, _, _)| m.label.clone()).collect();
    let stems = stems(&labels);
    let mut summaries = Vec::new();
    let mut written = Vec::new();
    for ((m, record, cfg), stem) in loaded.iter().zip(&stems) {
        summaries.push(summarize(&m.label, m.strategy.name(), &m.datasets, record, cfg.eval.spto));
        let svg = out.join(format!("{stem}-progression.svg"));
        fsutil::write_atomic(&svg, progression_svg(&format!("{} ({})", m.label, m.strategy), &m.datasets, record).as_bytes())?;
        let raw = out.join(format!("{stem}-record.csv"));
        fsutil::write_atomic(&raw, &encode_record(record))?;
        written.extend([svg, raw]);
    }
    let csv_path = out.join(TABLE_CSV);
    fsutil::write_atomic(&csv_path, &table_csv(&summaries)?)?;
    let json_path = out.join(TABLE_JSON);
    fsutil::write_json(&json_path, &summaries)?;
    written.splice(0..0, [csv_path, json_path]);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use depthcl_core::metrics::FrameMetrics;

    fn record(n: usize, upto: usize) -> EvalRecord {
        let mut r = EvalRecord::new(n).unwrap();
        for k in 0..upto {
            for j in 0..=k {
                let v = 100.0 + 10.0 * (k - j) as f64 + j as f64;
                r.set(j, k, FrameMetrics { mae: v, rmse: 1.5 * v, imae: v / 10.0, irmse: v / 5.0 }).unwrap();
            }
        }
        r
    }

    #[test]
    fn summary_has_twelve_cells_and_gaps() {
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let s = summarize("r", "finetune", &names, &record(3, 3), SptoNorm::Mean);
        assert!(s.cells().iter().all(Option::is_some));
        assert_eq!(s.cells().len(), 12);
        let partial = summarize("r", "finetune", &names, &record(3, 2), SptoNorm::Mean);
        assert!(partial.cells().iter().all(Option::is_none));
        let single = summarize("r", "finetune", &names[..1], &record(1, 1), SptoNorm::Mean);
        assert!(single.forgetting.mae.is_none() && single.performance.mae.is_some());
        let csv = String::from_utf8(table_csv(&[single]).unwrap()).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("r,finetune,a,true,,,,,"));
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let names: Vec<String> = ["a", "b<c"].map(String::from).to_vec();
        let a = progression_svg("t", &names, &record(2, 2));
        assert_eq!(a, progression_svg("t", &names, &record(2, 2)));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("b&lt;c") && !a.contains("NaN"));
        assert!(!progression_svg("t", &names, &record(2, 0)).contains("NaN"));
    }

    #[test]
    fn stems_are_unique() {
        let l: Vec<String> = ["a b", "a_b", "", "x"].map(String::from).to_vec();
        assert_eq!(stems(&l), ["a_b", "a_b-2", "run", "x"]);
    }
}
