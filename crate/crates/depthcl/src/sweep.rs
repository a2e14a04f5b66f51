//! Grid sweeps: one sequence run per point of a cartesian grid of config
//! overrides, followed by a combined report.

use std::path::{Path, PathBuf};

use crate::config::SequenceConfig;
use crate::error::{Error, Result};
use crate::harness::{run_sequence, RunOptions};
use crate::report::write_report;

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

/// Parses a TOML literal, falling back to a bare string (`ewc`).
pub fn parse_value(s: &str) -> toml::Value {
    format!("v = {s}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(s.to_string()))
}

/// `key=v1,v2,...`
pub fn parse_axis(s: &str) -> Result<GridAxis> {
    let (key, values) = s.split_once('=').ok_or_else(|| Error::Config(format!("grid axis `{s}` is not key=v1,v2")))?;
    let values: Vec<_> = values.split(',').filter(|v| !v.is_empty()).map(|v| parse_value(v.trim())).collect();
    if key.is_empty() || values.is_empty() {
        return Err(Error::Config(format!("grid axis `{s}` is not key=v1,v2")));
    }
    Ok(GridAxis { key: key.trim().to_string(), values })
}

pub type Point = Vec<(String, toml::Value)>;

/// Cartesian product, first axis varying slowest.
pub fn expand(axes: &[GridAxis]) -> Vec<Point> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect()
    })
}

pub fn point_label(base: &str, point: &Point) -> String {
    let mut s = base.to_string();
    for (k, v) in point {
        let short = k.rsplit('.').next().unwrap_or(k);
        let v = match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        s.push_str(&format!(" {short}={v}"));
    }
    s
}

/// Runs every grid point into `out/run-NNN` and writes the combined report
/// to `out/report`. A failing point does not stop the sweep; the first error
/// is returned after the report is written.
pub fn run_sweep(config: &Path, axes: &[GridAxis], fixed: &Point, out: &Path, resume: bool) -> Result<Vec<PathBuf>> {
    let points = expand(axes);
    // Resolve every point before running any, so config errors surface early.
    let mut resolved = Vec::new();
    for point in &points {
        let overrides: Point = fixed.iter().chain(point).cloned().collect();
        let mut cfg = SequenceConfig::load_with(config, &overrides)?.resolve()?;
        cfg.label = point_label(&cfg.label, point);
        resolved.push(cfg);
    }
    let mut dirs = Vec::new();
    let mut first_err = None;
    for (i, cfg) in resolved.iter().enumerate() {
        let dir = out.join(format!("run-{i:03}"));
        log::info!("sweep point {}/{}: {}", i + 1, resolved.len(), cfg.label);
        match run_sequence(cfg, &dir, RunOptions { resume, stop_after: None }) {
            Ok(_) => dirs.push(dir),
            Err(e) => {
                log::error!("{}: {e}", cfg.label);
                if dir.join(crate::harness::MANIFEST).is_file() {
                    dirs.push(dir);
                }
                first_err.get_or_insert(e);
            }
        }
    }
    if !dirs.is_empty() {
        write_report(&dirs, &out.join("report"))?;
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(dirs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing_and_expansion() {
        let a = parse_axis("strategy.lambda_ewc=0.1,10").unwrap();
        assert_eq!(a.values, [toml::Value::Float(0.1), toml::Value::Integer(10)]);
        let b = parse_axis("strategy.kind=ewc,replay").unwrap();
        assert_eq!(b.values[1], toml::Value::String("replay".into()));
        let pts = expand(&[a, b]);
        assert_eq!(pts.len(), 4);
        assert_eq!(point_label("x", &pts[1]), "x lambda_ewc=0.1 kind=replay");
        assert!(parse_axis("novalue").is_err());
        assert!(parse_axis("k=").is_err());
        assert_eq!(expand(&[]), vec![Vec::new()]);
    }
}
