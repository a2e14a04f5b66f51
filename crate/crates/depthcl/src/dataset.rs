//! On-disk datasets.
//!
//! A dataset file is a container of kind `dataset`. The JSON header holds
//! the raster size and, per sample, the intrinsics, both relative poses and
//! whether ground truth is present. The payload stores, per sample and in
//! this order: image, previous image, next image (each `3·H·W`, channel-major),
//! sparse depth, validity mask and, when present, ground truth (each `H·W`).
//! Depths are metres with 0 marking invalid pixels; images are in `[0, 1]`.
//! Any source that can fill these fields can be converted into the format.

use std::path::Path;

use depthcl_core::data::Sample;
use depthcl_core::diff::Array;
use depthcl_core::geometry::{Intrinsics, Pose};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, FormatError, Result};

pub const KIND: &str = "dataset";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    height: usize,
    width: usize,
    frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Frame {
    intrinsics: Intrinsics,
    pose_prev: Pose,
    pose_next: Pose,
    ground_truth: bool,
}

pub fn encode_dataset(samples: &[Sample]) -> Result<Vec<u8>> {
    let first = samples.first().ok_or_else(|| Error::Config("cannot save an empty dataset".into()))?;
    let (height, width) = (first.height(), first.width());
    let mut payload = Vec::new();
    let mut frames = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        if (s.height(), s.width()) != (height, width) {
            return Err(Error::Config("all samples of a dataset must share one size".into()));
        }
        for a in [&s.image, &s.prev_image, &s.next_image, &s.sparse, &s.mask] {
            payload.extend_from_slice(a.data());
        }
        if let Some(gt) = &s.ground_truth {
            payload.extend_from_slice(gt.data());
        }
        frames.push(Frame {
            intrinsics: s.intrinsics,
            pose_prev: s.pose_prev,
            pose_next: s.pose_next,
            ground_truth: s.ground_truth.is_some(),
        });
    }
    Ok(container::encode(KIND, &Header { height, width, frames }, &payload))
}

pub fn decode_dataset(bytes: &[u8]) -> std::result::Result<Vec<Sample>, FormatError> {
    let (header, payload): (Header, Vec<f64>) = container::decode(bytes, KIND)?;
    let (h, w) = (header.height, header.width);
    let plane = h * w;
    let need: usize = header.frames.iter().map(|f| plane * (11 + usize::from(f.ground_truth))).sum();
    if need != payload.len() {
        return Err(FormatError::Header(format!("payload holds {} values, header describes {}", payload.len(), need)));
    }
    let bad = |e: depthcl_core::Error| FormatError::Header(e.to_string());
    let mut pos = 0;
    let mut take = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let a = Array::new(shape, payload[pos..pos + n].to_vec());
        pos += n;
        a
    };
    let mut out = Vec::with_capacity(header.frames.len());
    for f in header.frames {
        let image = take(&[3, h, w]).map_err(bad)?;
        let prev_image = take(&[3, h, w]).map_err(bad)?;
        let next_image = take(&[3, h, w]).map_err(bad)?;
        let sparse = take(&[1, h, w]).map_err(bad)?;
        let mask = take(&[1, h, w]).map_err(bad)?;
        let ground_truth = if f.ground_truth { Some(take(&[1, h, w]).map_err(bad)?) } else { None };
        let s = Sample {
            image,
            prev_image,
            next_image,
            sparse,
            mask,
            intrinsics: f.intrinsics,
            pose_prev: f.pose_prev,
            pose_next: f.pose_next,
            ground_truth,
        };
        s.validate().map_err(bad)?;
        out.push(s);
    }
    Ok(out)
}

pub fn save_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_dataset(samples)?)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let bytes = crate::fsutil::read(path)?;
    decode_dataset(&bytes).map_err(|e| Error::format(path, e))
}
