//! Model checkpoints and strategy states.

use std::path::Path;

use depthcl_core::continual::{Anchor, BufferEntry, FisherDiag, ReplayBuffer, StrategyConfig, StrategyState};
use depthcl_core::data::SampleSource;
use depthcl_core::diff::{Array, ParamVector, Segment};
use depthcl_core::model::DepthNetConfig;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const STRATEGY_KIND: &str = "strategy-state";

/// Network parameters plus what is needed to rebuild and place them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: DepthNetConfig,
    pub params: ParamVector,
    pub seed: u64,
    /// Number of datasets trained when the checkpoint was taken.
    pub datasets_trained: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct SegmentShape {
    name: String,
    shape: Vec<usize>,
}

fn layout_of(p: &ParamVector) -> Vec<SegmentShape> {
    p.segments()
        .iter()
        .map(|s| SegmentShape {
            name: s.name.clone(),
            shape: s.value.shape().to_vec(),
        })
        .collect()
}

fn rebuild(layout: &[SegmentShape], flat: &[f64]) -> std::result::Result<ParamVector, FormatError> {
    let bad = |e: depthcl_core::Error| FormatError::Header(e.to_string());
    let need: usize = layout.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    if need != flat.len() {
        return Err(FormatError::Header(format!("parameter layout needs {} values, found {}", need, flat.len())));
    }
    let mut pos = 0;
    let segments = layout
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let value = Array::new(&s.shape, flat[pos..pos + n].to_vec()).map_err(bad)?;
            pos += n;
            Ok(Segment { name: s.name.clone(), value })
        })
        .collect::<std::result::Result<Vec<_>, FormatError>>()?;
    ParamVector::new(segments).map_err(bad)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    net: DepthNetConfig,
    seed: u64,
    datasets_trained: usize,
    layout: Vec<SegmentShape>,
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    c.net.check_params(&c.params)?;
    let header = CheckpointHeader {
        net: c.net.clone(),
        seed: c.seed,
        datasets_trained: c.datasets_trained,
        layout: layout_of(&c.params),
    };
    Ok(container::encode(CHECKPOINT_KIND, &header, &c.params.flatten()))
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, FormatError> {
    let (h, flat): (CheckpointHeader, Vec<f64>) = container::decode(bytes, CHECKPOINT_KIND)?;
    let params = rebuild(&h.layout, &flat)?;
    h.net.check_params(&params).map_err(|e| FormatError::Header(e.to_string()))?;
    Ok(Checkpoint {
        net: h.net,
        params,
        seed: h.seed,
        datasets_trained: h.datasets_trained,
    })
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_checkpoint(c)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&crate::fsutil::read(path)?).map_err(|e| Error::format(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyHeader {
    config: StrategyConfig,
    datasets_seen: usize,
    layout: Vec<SegmentShape>,
    anchors: Vec<AnchorHeader>,
    buffer: Option<BufferHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorHeader {
    dataset: usize,
    fisher: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferHeader {
    capacity: usize,
    /// `(dataset, sample indices)`; samples are re-read from the datasets.
    entries: Vec<(usize, Vec<usize>)>,
}

/// Anchors and Fisher diagonals go into the payload; buffered samples are
/// stored as references into their datasets.
pub fn encode_strategy(state: &StrategyState) -> Result<Vec<u8>> {
    state.validate()?;
    let layout = state.anchors.first().map(|a| layout_of(&a.params)).unwrap_or_default();
    let mut payload = Vec::new();
    let mut anchors = Vec::new();
    for a in &state.anchors {
        if layout_of(&a.params) != layout {
            return Err(Error::Config("anchors with differing layouts".into()));
        }
        payload.extend(a.params.flatten());
        if let Some(f) = &a.fisher {
            payload.extend_from_slice(f.values());
        }
        anchors.push(AnchorHeader {
            dataset: a.dataset,
            fisher: a.fisher.is_some(),
        });
    }
    let buffer = state.buffer.as_ref().map(|b| BufferHeader {
        capacity: b.capacity(),
        entries: b.entries().iter().map(|e| (e.dataset, e.indices.clone())).collect(),
    });
    let header = StrategyHeader {
        config: state.config,
        datasets_seen: state.datasets_seen,
        layout,
        anchors,
        buffer,
    };
    Ok(container::encode(STRATEGY_KIND, &header, &payload))
}

/// Rebuilds a strategy state; `sources[d]` must be the dataset with id `d`.
pub fn decode_strategy(bytes: &[u8], sources: &[&dyn SampleSource]) -> std::result::Result<StrategyState, FormatError> {
    let (h, payload): (StrategyHeader, Vec<f64>) = container::decode(bytes, STRATEGY_KIND)?;
    let bad = |e: depthcl_core::Error| FormatError::Header(e.to_string());
    let p: usize = h.layout.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    let need: usize = h.anchors.iter().map(|a| p * (1 + usize::from(a.fisher))).sum();
    if need != payload.len() {
        return Err(FormatError::Header(format!("strategy payload holds {} values, header describes {}", payload.len(), need)));
    }
    let mut pos = 0;
    let mut anchors = Vec::new();
    for a in &h.anchors {
        let params = rebuild(&h.layout, &payload[pos..pos + p])?;
        pos += p;
        let fisher = if a.fisher {
            let f = FisherDiag::new(payload[pos..pos + p].to_vec()).map_err(bad)?;
            pos += p;
            Some(f)
        } else {
            None
        };
        anchors.push(Anchor {
            dataset: a.dataset,
            params,
            fisher,
        });
    }
    let buffer = match h.buffer {
        None => None,
        Some(b) => {
            let mut buf = ReplayBuffer::new(b.capacity).map_err(bad)?;
            for (dataset, indices) in b.entries {
                let source = sources
                    .get(dataset)
                    .ok_or_else(|| FormatError::Header(format!("buffer refers to unknown dataset {dataset}")))?;
                let samples = indices.iter().map(|&i| source.sample(i)).collect::<depthcl_core::Result<Vec<_>>>().map_err(bad)?;
                buf.insert(BufferEntry { dataset, indices, samples }).map_err(bad)?;
            }
            Some(buf)
        }
    };
    let state = StrategyState {
        config: h.config,
        datasets_seen: h.datasets_seen,
        anchors,
        buffer,
    };
    state.validate().map_err(bad)?;
    Ok(state)
}

pub fn save_strategy(path: &Path, state: &StrategyState) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_strategy(state)?)
}

pub fn load_strategy(path: &Path, sources: &[&dyn SampleSource]) -> Result<StrategyState> {
    decode_strategy(&crate::fsutil::read(path)?, sources).map_err(|e| Error::format(path, e))
}
