//! Evaluation record files: a version line, then CSV rows
//! `metric,j,k,value` for every populated entry.
//!
//! ```text
//! # depthcl-record v1 datasets=3
//! metric,j,k,value
//! mae,0,0,312.5
//! ```

use std::path::Path;

use depthcl_core::metrics::{EvalRecord, FrameMetrics, Metric};

use crate::error::{Error, FormatError, Result};
use crate::fsutil;

const VERSION: u32 = 1;

pub fn encode_record(record: &EvalRecord) -> Vec<u8> {
    let mut out = format!("# depthcl-record v{VERSION} datasets={}\n", record.datasets()).into_bytes();
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(["metric", "j", "k", "value"]).expect("in-memory write");
    for metric in Metric::ALL {
        for (j, k, m) in record.entries() {
            // `{}` on f64 prints the shortest string that parses back exactly.
            w.write_record([metric.name(), &j.to_string(), &k.to_string(), &m.get(metric).to_string()])
                .expect("in-memory write");
        }
    }
    w.flush().expect("in-memory write");
    drop(w);
    out
}

pub fn decode_record(bytes: &[u8]) -> std::result::Result<EvalRecord, FormatError> {
    let text = std::str::from_utf8(bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    let (first, rest) = text.split_once('\n').ok_or(FormatError::Truncated)?;
    let mut words = first.strip_prefix("# depthcl-record ").ok_or(FormatError::BadMagic)?.split_whitespace();
    let version: u32 = words
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| FormatError::Header("missing record version".into()))?;
    if version != VERSION {
        return Err(FormatError::Version { found: version, expected: VERSION });
    }
    let n: usize = words
        .next()
        .and_then(|v| v.strip_prefix("datasets="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| FormatError::Header("missing dataset count".into()))?;
    let bad = |m: String| FormatError::Header(m);
    let mut cells: Vec<Option<[Option<f64>; 4]>> = vec![None; n * n];
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 4 {
            return Err(bad(format!("record row has {} fields", row.len())));
        }
        let metric = Metric::parse(&row[0]).map_err(|e| bad(e.to_string()))?;
        let j: usize = row[1].parse().map_err(|_| bad(format!("bad index `{}`", &row[1])))?;
        let k: usize = row[2].parse().map_err(|_| bad(format!("bad index `{}`", &row[2])))?;
        let v: f64 = row[3].parse().map_err(|_| bad(format!("bad value `{}`", &row[3])))?;
        if j > k || k >= n {
            return Err(bad(format!("entry ({j}, {k}) outside a {n}-dataset record")));
        }
        let slot = cells[k * n + j].get_or_insert([None; 4]);
        let m = Metric::ALL.iter().position(|x| *x == metric).unwrap();
        slot[m] = Some(v);
    }
    let mut record = EvalRecord::new(n).map_err(|e| bad(e.to_string()))?;
    for (i, cell) in cells.into_iter().enumerate() {
        let Some(c) = cell else { continue };
        let [Some(mae), Some(rmse), Some(imae), Some(irmse)] = c else {
            return Err(bad(format!("entry ({}, {}) lacks some metrics", i % n, i / n)));
        };
        record
            .set(i % n, i / n, FrameMetrics { mae, rmse, imae, irmse })
            .map_err(|e| bad(e.to_string()))?;
    }
    Ok(record)
}

pub fn write_record(path: &Path, record: &EvalRecord) -> Result<()> {
    fsutil::write_atomic(path, &encode_record(record))
}

pub fn read_record(path: &Path) -> Result<EvalRecord> {
    decode_record(&fsutil::read(path)?).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut r = EvalRecord::new(3).unwrap();
        let m = |x: f64| FrameMetrics { mae: x, rmse: x * 1.1, imae: x / 3.0, irmse: 0.1 + 0.2 };
        r.set(0, 0, m(1.0 / 3.0)).unwrap();
        r.set(0, 1, m(1e-300)).unwrap();
        r.set(1, 2, m(123456.789)).unwrap();
        let back = decode_record(&encode_record(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(matches!(decode_record(b"hello\nx"), Err(FormatError::BadMagic)));
        assert!(matches!(decode_record(b"# depthcl-record v2 datasets=1\nmetric,j,k,value\n"), Err(FormatError::Version { .. })));
        let partial = b"# depthcl-record v1 datasets=2\nmetric,j,k,value\nmae,0,0,1\n";
        assert!(matches!(decode_record(partial), Err(FormatError::Header(_))));
        let outside = b"# depthcl-record v1 datasets=1\nmetric,j,k,value\nmae,1,0,1\n";
        assert!(decode_record(outside).is_err());
    }
}
