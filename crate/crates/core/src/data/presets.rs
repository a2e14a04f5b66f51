//! Shipped domains and domain sequences.
//!
//! Three indoor-like and three outdoor-like domains that differ along range,
//! sensor pattern, scene style and appearance.

use alloc::string::String;
use alloc::vec::Vec;

use super::{CameraMotion, DomainSpec, SceneStyle, SparsityPattern, TextureStats};
use crate::error::{contract, Result};

pub const DEFAULT_HEIGHT: usize = 48;
pub const DEFAULT_WIDTH: usize = 64;

const PRESETS: [&str; 6] = ["rgbd-dense", "room-scan", "feature-track", "lidar-scanline", "wide-range", "synthetic-clean"];

const SEQUENCES: [(&str, [&str; 3]); 5] = [
    ("indoor-a", ["rgbd-dense", "room-scan", "feature-track"]),
    ("indoor-b", ["rgbd-dense", "feature-track", "room-scan"]),
    ("outdoor-a", ["lidar-scanline", "wide-range", "synthetic-clean"]),
    ("outdoor-b", ["lidar-scanline", "synthetic-clean", "wide-range"]),
    ("mixed", ["lidar-scanline", "rgbd-dense", "wide-range"]),
];

pub fn preset_names() -> &'static [&'static str] {
    &PRESETS
}

pub fn sequence_preset_names() -> Vec<&'static str> {
    SEQUENCES.iter().map(|(n, _)| *n).collect()
}

#[allow(clippy::too_many_arguments)]
fn spec(
    name: &str,
    range: (f64, f64),
    style: SceneStyle,
    texture: (f64, f64, f64),
    pattern: SparsityPattern,
    density: f64,
    motion: (f64, f64),
    tint: [f64; 3],
    ambient: f64,
    image_noise: f64,
) -> DomainSpec {
    DomainSpec {
        name: String::from(name),
        depth_min: range.0,
        depth_max: range.1,
        style,
        texture: TextureStats {
            freq_min: texture.0,
            freq_max: texture.1,
            contrast: texture.2,
        },
        pattern,
        density,
        motion: CameraMotion {
            translation: motion.0,
            rotation: motion.1,
        },
        height: DEFAULT_HEIGHT,
        width: DEFAULT_WIDTH,
        tint,
        ambient,
        image_noise,
        focal_scale: 0.9,
    }
}

/// A shipped domain at the default 64×48 resolution.
pub fn preset(name: &str) -> Result<DomainSpec> {
    use SceneStyle::*;
    use SparsityPattern::*;
    let s = match name {
        "rgbd-dense" => spec(name, (0.2, 5.0), PlanarRooms, (0.6, 2.5, 0.35), UniformRandom, 0.05, (0.05, 0.02), [1.0, 0.9, 0.75], 0.45, 0.002),
        "room-scan" => spec(name, (0.2, 5.0), BoxesCorridor, (1.5, 4.0, 0.3), UniformRandom, 0.02, (0.06, 0.03), [0.7, 0.85, 1.0], 0.3, 0.002),
        "feature-track" => spec(name, (0.2, 5.0), PlanarRooms, (0.3, 1.2, 0.15), CornerFeatures, 0.005, (0.08, 0.04), [0.85, 1.0, 0.8], 0.6, 0.002),
        "lidar-scanline" => spec(name, (1.0, 100.0), BoxesCorridor, (0.02, 0.12, 0.3), Grid, 0.05, (1.0, 0.02), [0.95, 0.95, 0.9], 0.35, 0.002),
        "wide-range" => spec(name, (1.0, 80.0), RidgedTerrain, (0.03, 0.15, 0.35), Grid, 0.05, (0.8, 0.02), [0.9, 0.85, 0.7], 0.4, 0.002),
        "synthetic-clean" => spec(name, (1.0, 100.0), BoxesCorridor, (0.02, 0.08, 0.45), Grid, 0.05, (1.0, 0.02), [1.0, 0.7, 0.6], 0.5, 0.0),
        _ => return Err(contract!("unknown domain preset `{}`", name)),
    };
    Ok(s)
}

/// The domains of a named sequence, in training order.
pub fn sequence_preset(name: &str) -> Result<Vec<DomainSpec>> {
    let (_, domains) = SEQUENCES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| contract!("unknown sequence preset `{}`", name))?;
    domains.iter().map(|d| preset(d)).collect()
}
