//! Procedural multi-domain depth-completion data.
//!
//! Each [`DomainSpec`] describes a family of ray-cast scenes (rooms,
//! corridors, terrain) with its own depth range, texture statistics, sparse
//! sensor pattern and camera motion. Samples are rendered independently from
//! `(spec, seed, index)`, so a dataset of any size can be streamed without
//! holding it in memory.

mod presets;
mod scene;
mod sparsify;

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diff::Array;
use crate::error::{contract, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::rng::{self, stream};

pub use presets::{preset, preset_names, sequence_preset, sequence_preset_names};
pub use scene::render_sample;
pub use sparsify::{grid_stride, sparsify};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneStyle {
    PlanarRooms,
    RidgedTerrain,
    BoxesCorridor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityPattern {
    UniformRandom,
    /// Regular lattice, like projected lidar scanlines.
    Grid,
    /// Strongest image corners, like tracked visual features.
    CornerFeatures,
}

/// Surface texture statistics. Frequencies are in cycles per metre of
/// surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureStats {
    pub freq_min: f64,
    pub freq_max: f64,
    /// Amplitude of the texture pattern around mid grey, in `(0, 0.5]`.
    pub contrast: f64,
}

/// Per-frame camera motion magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMotion {
    /// Metres per frame.
    pub translation: f64,
    /// Radians per frame.
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub depth_min: f64,
    pub depth_max: f64,
    pub style: SceneStyle,
    pub texture: TextureStats,
    pub pattern: SparsityPattern,
    pub density: f64,
    pub motion: CameraMotion,
    pub height: usize,
    pub width: usize,
    /// Multiplicative colour cast applied to every surface albedo.
    #[serde(default = "default_tint")]
    pub tint: [f64; 3],
    /// Ambient share of the lighting; the rest is Lambertian from a fixed
    /// world-space direction.
    #[serde(default = "default_ambient")]
    pub ambient: f64,
    /// Standard deviation of per-frame additive image noise.
    #[serde(default)]
    pub image_noise: f64,
    /// Focal length as a multiple of the image width.
    #[serde(default = "default_focal")]
    pub focal_scale: f64,
}

fn default_tint() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

fn default_ambient() -> f64 {
    0.4
}

fn default_focal() -> f64 {
    0.9
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min && self.depth_max.is_finite()) {
            return Err(contract!("domain `{}`: need 0 < depth_min < depth_max", self.name));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(contract!("domain `{}`: density must be in (0, 1]", self.name));
        }
        if self.height < 16 || self.width < 16 {
            return Err(contract!("domain `{}`: image must be at least 16x16", self.name));
        }
        let t = &self.texture;
        if !(t.freq_min > 0.0 && t.freq_max >= t.freq_min && t.contrast > 0.0 && t.contrast <= 0.5) {
            return Err(contract!("domain `{}`: bad texture statistics", self.name));
        }
        if !(self.motion.translation >= 0.0 && self.motion.rotation >= 0.0) {
            return Err(contract!("domain `{}`: motion magnitudes must be >= 0", self.name));
        }
        if !(self.ambient >= 0.0 && self.ambient <= 1.0 && self.image_noise >= 0.0 && self.focal_scale > 0.0)
            || self.tint.iter().any(|c| !(*c >= 0.0))
        {
            return Err(contract!("domain `{}`: bad appearance parameters", self.name));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let f = self.focal_scale * self.width as f64;
        Intrinsics {
            fx: f,
            fy: f,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        }
    }

    /// Same domain at a different resolution.
    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }
}

/// One training/evaluation unit.
///
/// Images are `[3, H, W]` in `[0, 1]`; depth maps are `[1, H, W]` in metres
/// with 0 marking invalid entries. `pose_prev`/`pose_next` map points from
/// the current camera frame into the previous/next camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Array,
    pub prev_image: Array,
    pub next_image: Array,
    pub sparse: Array,
    pub mask: Array,
    pub intrinsics: Intrinsics,
    pub pose_prev: Pose,
    pub pose_next: Pose,
    pub ground_truth: Option<Array>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let img = [3, h, w];
        let map = [1, h, w];
        if self.image.shape() != img || self.prev_image.shape() != img || self.next_image.shape() != img {
            return Err(contract!("sample images must all be [3, {}, {}]", h, w));
        }
        if self.sparse.shape() != map || self.mask.shape() != map {
            return Err(contract!("sample depth maps must be [1, {}, {}]", h, w));
        }
        crate::losses::check_sparse_mask(&self.sparse, &self.mask)?;
        if let Some(gt) = &self.ground_truth {
            if gt.shape() != map || gt.data().iter().any(|d| !(*d >= 0.0)) {
                return Err(contract!("ground truth must be [1, {}, {}] and non-negative", h, w));
            }
        }
        self.intrinsics.validate()?;
        self.pose_prev.validate()?;
        self.pose_next.validate()
    }
}

/// Read access to an indexed collection of samples.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        self.get(index).cloned().ok_or_else(|| contract!("sample index {} out of range", index))
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        self.as_slice().sample(index)
    }
}

/// A domain rendered on demand: sample `i` is a pure function of
/// `(spec, seed, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDomain {
    pub spec: DomainSpec,
    pub seed: u64,
    pub count: usize,
}

impl GeneratedDomain {
    pub fn new(spec: DomainSpec, count: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if count == 0 {
            return Err(contract!("domain `{}`: sample count must be >= 1", spec.name));
        }
        Ok(Self { spec, seed, count })
    }
}

impl SampleSource for GeneratedDomain {
    fn len(&self) -> usize {
        self.count
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        if index >= self.count {
            return Err(contract!("sample index {} out of range", index));
        }
        render_sample(&self.spec, sample_seed(&self.spec, self.seed, index))
    }
}

/// FNV-1a of the domain name, so equally seeded domains render different
/// scenes.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of sample `index` of a domain generated with `seed`.
pub fn sample_seed(spec: &DomainSpec, seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, &[stream::SAMPLE, name_hash(&spec.name), index as u64])
}

/// Renders `count` samples of a domain.
pub fn generate_domain(spec: &DomainSpec, count: usize, seed: u64) -> Result<Vec<Sample>> {
    let domain = GeneratedDomain::new(spec.clone(), count, seed)?;
    (0..count).map(|i| domain.sample(i)).collect()
}

/// Disjoint train/evaluation index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Seeded holdout: `round(fraction·count)` indices (at least one, and at
/// least one left for training when `count > 1`) go to evaluation. Both lists
/// are sorted.
pub fn holdout_split(count: usize, fraction: f64, seed: u64) -> Result<Split> {
    if count == 0 || !(0.0..1.0).contains(&fraction) {
        return Err(contract!("holdout split needs count >= 1 and fraction in [0, 1)"));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut rng::rng_for(seed, &[stream::SPLIT]));
    let mut n_eval = libm::round(fraction * count as f64) as usize;
    if fraction > 0.0 {
        n_eval = n_eval.clamp(1, count.saturating_sub(1).max(1));
    }
    let mut eval = idx[..n_eval].to_vec();
    let mut train = idx[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, eval })
}

#[cfg(test)]
mod tests;
