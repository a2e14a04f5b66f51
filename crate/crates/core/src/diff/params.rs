use alloc::string::String;
use alloc::vec::Vec;

use super::array::Array;
use crate::error::{contract, Result};

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub value: Array,
}

/// Ordered, uniquely named parameter tensors, viewable as one flat vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if segments[..i].iter().any(|o| o.name == s.name) {
                return Err(contract!("duplicate parameter segment `{}`", s.name));
            }
        }
        Ok(Self { segments })
    }

    /// Single unnamed-style segment holding a flat vector.
    pub fn from_flat_single(name: &str, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(alloc::vec![Segment {
            name: name.into(),
            value: Array::new(&[n], values)?,
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.segments.iter().find(|s| s.name == name).map(|s| &s.value)
    }

    /// Total scalar count `P`.
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.segments {
            out.extend_from_slice(s.value.data());
        }
        out
    }

    /// Rebuilds a vector with this layout from flat values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(contract!(
                "flat vector has {} values, layout needs {}",
                flat.len(),
                self.len()
            ));
        }
        let mut offset = 0;
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let n = s.value.len();
                let value = Array::new(s.value.shape(), flat[offset..offset + n].to_vec());
                offset += n;
                value.map(|value| Segment {
                    name: s.name.clone(),
                    value,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { segments })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    name: s.name.clone(),
                    value: Array::zeros(s.value.shape()),
                })
                .collect(),
        }
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }
}
