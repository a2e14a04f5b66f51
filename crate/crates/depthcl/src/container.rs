//! Single-file binary container shared by datasets, checkpoints and
//! strategy states.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "DEPTHCL\0"
//! version  u32
//! kind     u16 length + UTF-8 bytes ("dataset", "checkpoint", ...)
//! header   u64 length + JSON bytes
//! payload  u64 count + count × f64
//! sha256   32 bytes over everything above
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::fsutil;

pub const MAGIC: [u8; 8] = *b"DEPTHCL\0";
pub const VERSION: u32 = 1;
const DIGEST: usize = 32;

pub fn encode<H: Serialize>(kind: &str, header: &H, payload: &[f64]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("serializable header");
    let mut out = Vec::with_capacity(64 + kind.len() + header.len() + 8 * payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind.len() as u16).to_le_bytes());
    out.extend_from_slice(kind.as_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Checks magic, version, lengths and checksum, then parses the header.
/// Nothing is returned unless the whole file is intact.
pub fn decode<H: DeserializeOwned>(bytes: &[u8], kind: &str) -> std::result::Result<(H, Vec<f64>), FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(MAGIC.len()).map_err(|_| FormatError::BadMagic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let kind_len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
    let found_kind = c.take(kind_len)?;
    let header_len = usize::try_from(c.u64()?).map_err(|_| FormatError::Truncated)?;
    let header = c.take(header_len)?;
    let count = usize::try_from(c.u64()?).map_err(|_| FormatError::Truncated)?;
    let payload = c.take(count.checked_mul(8).ok_or(FormatError::Truncated)?)?;
    let body_end = c.pos;
    let digest = c.take(DIGEST)?;
    if c.pos != bytes.len() || Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(FormatError::Checksum);
    }
    let found_kind = String::from_utf8_lossy(found_kind);
    if found_kind != kind {
        return Err(FormatError::Kind {
            expected: kind.into(),
            found: found_kind.into_owned(),
        });
    }
    let header = serde_json::from_slice(header).map_err(|e| FormatError::Header(e.to_string()))?;
    let payload = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((header, payload))
}

pub fn write<H: Serialize>(path: &Path, kind: &str, header: &H, payload: &[f64]) -> Result<()> {
    fsutil::write_atomic(path, &encode(kind, header, payload))
}

pub fn read<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    let bytes = fsutil::read(path)?;
    decode(&bytes, kind).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        encode("probe", &vec![1u32, 2, 3], &[0.5, -1.25, f64::MIN_POSITIVE])
    }

    #[test]
    fn round_trip_is_exact() {
        let (h, p): (Vec<u32>, Vec<f64>) = decode(&sample(), "probe").unwrap();
        assert_eq!(h, [1, 2, 3]);
        assert_eq!(p, [0.5, -1.25, f64::MIN_POSITIVE]);
    }

    #[test]
    fn faults_map_to_distinct_errors() {
        let good = sample();
        let dec = |b: &[u8]| decode::<Vec<u32>>(b, "probe").unwrap_err();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(dec(&b), FormatError::BadMagic));
        let mut b = good.clone();
        b[8] = 9;
        assert!(matches!(dec(&b), FormatError::Version { found: 9, .. }));
        assert!(matches!(dec(&good[..good.len() - 40]), FormatError::Truncated));
        assert!(matches!(dec(&good[..5]), FormatError::BadMagic));
        let mut b = good.clone();
        let n = b.len();
        b[n - 40] ^= 1;
        assert!(matches!(dec(&b), FormatError::Checksum));
        let mut b = good.clone();
        b.push(0);
        assert!(matches!(dec(&b), FormatError::Checksum));
        assert!(matches!(decode::<Vec<u32>>(&good, "other").unwrap_err(), FormatError::Kind { .. }));
    }
}
