//! Sequence configuration files (TOML).
//!
//! ```toml
//! seed = 0
//! sequence = "indoor-a"     # a shipped sequence, or list [[datasets]]
//! count = 2500              # samples per generated dataset
//!
//! [strategy]
//! kind = "replay"
//!
//! [train]
//! epochs = 1
//! batch_size = 8
//! ```

use std::path::{Path, PathBuf};

use depthcl_core::continual::{StrategyConfig, TrainConfig};
use depthcl_core::data::{preset, sequence_preset, DomainSpec};
use depthcl_core::metrics::{Averaging, RangeCap, SptoNorm};
use depthcl_core::model::DepthNetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    /// Run label used in reports; defaults to the strategy name.
    #[serde(default)]
    pub label: Option<String>,
    pub seed: u64,
    /// Name of a shipped sequence; mutually exclusive with `datasets`.
    #[serde(default)]
    pub sequence: Option<String>,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    /// Samples per generated dataset unless overridden per dataset.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Fraction of each dataset held out for evaluation.
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Checkpoint whose parameters replace training on the first dataset.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_count() -> usize {
    2500
}

fn default_eval_fraction() -> f64 {
    0.2
}

/// One dataset of a sequence: a shipped preset, an inline spec, or a file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub spec: Option<DomainSpec>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub cap: Option<RangeCap>,
    /// Raster size override for generated datasets.
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default)]
    pub width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub head_width: usize,
    /// Output range; defaults to the union of the datasets' depth ranges.
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DepthNetConfig::new(0.2, 5.0);
        Self {
            widths: d.widths,
            head_width: d.head_width,
            depth_min: None,
            depth_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub averaging: Averaging,
    pub spto: SptoNorm,
    /// Evaluate frames on the rayon pool.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            averaging: Averaging::PerFrame,
            spto: SptoNorm::Mean,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Generated { spec: DomainSpec, count: usize },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDataset {
    pub name: String,
    pub source: DatasetSource,
    pub cap: RangeCap,
}

/// A configuration with every default filled in; this is what a run stamps
/// into its output directory and hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub label: String,
    pub seed: u64,
    pub datasets: Vec<ResolvedDataset>,
    pub eval_fraction: f64,
    pub strategy: StrategyConfig,
    pub train: TrainConfig,
    pub net: DepthNetConfig,
    pub eval: EvalConfig,
    pub pretrained: Option<PathBuf>,
}

impl ResolvedConfig {
    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Indoor ranges use the indoor cap; anything longer is capped at its own
/// maximum depth from 1 mm.
pub fn default_cap(spec: &DomainSpec) -> RangeCap {
    if spec.depth_max <= RangeCap::INDOOR.max {
        RangeCap::INDOOR
    } else {
        RangeCap {
            min: 0.001,
            max: spec.depth_max,
        }
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> std::result::Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| format!("bad override key `{key}`"))?;
    let mut t = table;
    for p in parts {
        t = match t.entry(p).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
            toml::Value::Table(inner) => inner,
            _ => return Err(format!("override `{key}`: `{p}` is not a table")),
        };
    }
    t.insert(last.to_string(), value);
    Ok(())
}

impl SequenceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Loads a config file after replacing dotted keys (`train.epochs`) with
    /// the given values.
    pub fn load_with(path: &Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ctx = |e: String| Error::Config(format!("{}: {e}", path.display()));
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| ctx(e.to_string()))?;
        for (key, v) in overrides {
            set_dotted(&mut value, key, v.clone()).map_err(ctx)?;
        }
        let mut cfg: Self = toml::Value::Table(value).try_into().map_err(|e: toml::de::Error| ctx(e.to_string()))?;
        // Relative dataset and checkpoint paths are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if let Some(p) = &d.path {
                d.path = Some(base.join(p));
            }
        }
        if let Some(p) = &cfg.pretrained {
            cfg.pretrained = Some(base.join(p));
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let cfg_err = |e: depthcl_core::Error| Error::Config(e.to_string());
        let entries: Vec<DatasetConfig> = match (&self.sequence, self.datasets.is_empty()) {
            (Some(_), false) => return Err(Error::Config("give either `sequence` or `datasets`, not both".into())),
            (None, true) => return Err(Error::Config("a sequence needs at least one dataset".into())),
            (Some(name), true) => sequence_preset(name)
                .map_err(cfg_err)?
                .into_iter()
                .map(|s| DatasetConfig {
                    preset: Some(s.name),
                    ..DatasetConfig::default()
                })
                .collect(),
            (None, false) => self.datasets.clone(),
        };
        let mut datasets = Vec::with_capacity(entries.len());
        for (k, d) in entries.iter().enumerate() {
            let spec = match (&d.preset, &d.spec, &d.path) {
                (Some(name), None, None) => Some(preset(name).map_err(cfg_err)?),
                (None, Some(s), None) => Some(s.clone()),
                (None, None, Some(_)) => None,
                _ => return Err(Error::Config(format!("dataset {k}: give exactly one of `preset`, `spec`, `path`"))),
            };
            let resolved = match (spec, &d.path) {
                (Some(mut spec), _) => {
                    if d.height.is_some() || d.width.is_some() {
                        let (h, w) = (d.height.unwrap_or(spec.height), d.width.unwrap_or(spec.width));
                        spec = spec.with_size(h, w);
                    }
                    spec.validate().map_err(cfg_err)?;
                    let count = d.count.unwrap_or(self.count);
                    if count < 2 {
                        return Err(Error::Config(format!("dataset {k}: needs at least 2 samples")));
                    }
                    ResolvedDataset {
                        name: spec.name.clone(),
                        cap: d.cap.unwrap_or_else(|| default_cap(&spec)),
                        source: DatasetSource::Generated { spec, count },
                    }
                }
                (None, Some(path)) => ResolvedDataset {
                    name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                    cap: d.cap.ok_or_else(|| Error::Config(format!("dataset {k}: file datasets need an explicit `cap`")))?,
                    source: DatasetSource::File { path: path.clone() },
                },
                (None, None) => unreachable!(),
            };
            resolved.cap.validate().map_err(cfg_err)?;
            datasets.push(resolved);
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config("eval_fraction must lie in (0, 1)".into()));
        }
        let lo = datasets
            .iter()
            .map(|d| match &d.source {
                DatasetSource::Generated { spec, .. } => spec.depth_min,
                DatasetSource::File { .. } => d.cap.min,
            })
            .fold(f64::INFINITY, f64::min);
        let hi = datasets
            .iter()
            .map(|d| match &d.source {
                DatasetSource::Generated { spec, .. } => spec.depth_max,
                DatasetSource::File { .. } => d.cap.max,
            })
            .fold(0.0, f64::max);
        let net = DepthNetConfig {
            widths: self.model.widths.clone(),
            head_width: self.model.head_width,
            depth_min: self.model.depth_min.unwrap_or(lo),
            depth_max: self.model.depth_max.unwrap_or(hi),
        };
        net.validate().map_err(cfg_err)?;
        self.strategy.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        Ok(ResolvedConfig {
            label: self.label.clone().unwrap_or_else(|| self.strategy.kind.name().to_string()),
            seed: self.seed,
            datasets,
            eval_fraction: self.eval_fraction,
            strategy: self.strategy,
            train: self.train.clone(),
            net,
            eval: self.eval,
            pretrained: self.pretrained.clone(),
        })
    }
}
