//! Sequence runs: train on each dataset in turn under one strategy, evaluate
//! on every dataset seen so far, and persist checkpoints, strategy states,
//! the evaluation record and a manifest after every dataset.

use std::path::Path;
use std::time::Instant;

use depthcl_core::continual::{StrategyKind, StrategyState, TrainConfig, TrainData};
use depthcl_core::data::{holdout_split, GeneratedDomain, Sample, SampleSource, Split};
use depthcl_core::diff::ParamVector;
use depthcl_core::metrics::{aggregate, evaluate_frame, Averaging, EvalRecord, RangeCap, SplitMetrics};
use depthcl_core::model::DepthNetConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, load_strategy, save_checkpoint, save_strategy, Checkpoint};
use crate::config::{DatasetSource, ResolvedConfig};
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::record::{read_record, write_record};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_STAMP: &str = "config.json";
pub const RECORD: &str = "record.csv";
const MANIFEST_FORMAT: u32 = 1;

/// Samples of one dataset, rendered on demand or loaded from a file.
#[derive(Debug, Clone)]
pub enum DatasetHandle {
    Generated(GeneratedDomain),
    Loaded(Vec<Sample>),
}

impl SampleSource for DatasetHandle {
    fn len(&self) -> usize {
        match self {
            Self::Generated(g) => g.len(),
            Self::Loaded(v) => v.len(),
        }
    }

    fn sample(&self, index: usize) -> depthcl_core::Result<Sample> {
        match self {
            Self::Generated(g) => g.sample(index),
            Self::Loaded(v) => v.sample(index),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub data: DatasetHandle,
    pub split: Split,
    pub cap: RangeCap,
}

pub fn prepare_datasets(cfg: &ResolvedConfig) -> Result<Vec<PreparedDataset>> {
    cfg.datasets
        .iter()
        .map(|d| {
            let data = match &d.source {
                DatasetSource::Generated { spec, count } => DatasetHandle::Generated(GeneratedDomain::new(spec.clone(), *count, cfg.seed)?),
                DatasetSource::File { path } => DatasetHandle::Loaded(load_dataset(path)?),
            };
            if data.len() < 2 {
                return Err(Error::Config(format!("dataset `{}` needs at least 2 samples", d.name)));
            }
            let split = holdout_split(data.len(), cfg.eval_fraction, cfg.seed)?;
            Ok(PreparedDataset {
                name: d.name.clone(),
                data,
                split,
                cap: d.cap,
            })
        })
        .collect()
}

/// Split-averaged metrics of `params` on `indices`. The parallel path
/// evaluates frames on the rayon pool but reduces them in index order, so it
/// returns exactly what the sequential path returns.
pub fn evaluate_params(
    net: &DepthNetConfig,
    params: &ParamVector,
    source: &(dyn SampleSource + Sync),
    indices: &[usize],
    cap: RangeCap,
    averaging: Averaging,
    parallel: bool,
) -> Result<SplitMetrics> {
    net.check_params(params)?;
    let frames = if parallel {
        indices
            .par_iter()
            .map(|&i| evaluate_frame(net, params, source, i, cap))
            .collect::<depthcl_core::Result<Vec<_>>>()?
    } else {
        indices
            .iter()
            .map(|&i| evaluate_frame(net, params, source, i, cap))
            .collect::<depthcl_core::Result<Vec<_>>>()?
    };
    if frames.iter().any(|f| f.is_none()) {
        log::warn!("{} of {} frames have an empty evaluation mask", frames.iter().filter(|f| f.is_none()).count(), frames.len());
    }
    Ok(aggregate(&frames, averaging)?)
}

pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    source: &(dyn SampleSource + Sync),
    indices: &[usize],
    cap: RangeCap,
    averaging: Averaging,
    parallel: bool,
) -> Result<SplitMetrics> {
    evaluate_params(&checkpoint.net, &checkpoint.params, source, indices, cap, averaging, parallel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub dataset: usize,
    pub name: String,
    pub status: StepStatus,
    pub checkpoint: Option<String>,
    pub strategy_state: Option<String>,
    pub train_log: Option<String>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    /// Evaluation frames skipped for an empty mask, summed over datasets.
    pub empty_frames: usize,
    pub error: Option<String>,
}

/// Index of a run directory. Paths are relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub label: String,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
    pub config: String,
    pub datasets: Vec<String>,
    pub record: String,
    pub steps: Vec<StepRecord>,
    pub complete: bool,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        fsutil::read_json(&dir.join(MANIFEST))
    }

    /// Checks that the stamped config still hashes to `config_hash` and that
    /// every referenced file exists.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let cfg: ResolvedConfig = fsutil::read_json(&dir.join(&self.config))?;
        if cfg.hash() != self.config_hash {
            return Err(Error::Config(format!("{}: stamped config does not match the manifest hash", dir.display())));
        }
        let mut files = vec![&self.record];
        for s in &self.steps {
            files.extend([&s.checkpoint, &s.strategy_state, &s.train_log].into_iter().flatten());
        }
        for f in files {
            let p = dir.join(f);
            if !p.is_file() {
                return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by the manifest")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue from the last completed dataset of an existing run.
    pub resume: bool,
    /// Stop before training this dataset, leaving a resumable partial run.
    pub stop_after: Option<usize>,
}

fn step_paths(k: usize) -> (String, String, String) {
    (
        format!("checkpoints/step-{k}.ckpt"),
        format!("checkpoints/step-{k}.state"),
        format!("logs/train-{k}.json"),
    )
}

struct Progress {
    manifest: RunManifest,
    record: EvalRecord,
    params: ParamVector,
    state: StrategyState,
}

fn fresh(cfg: &ResolvedConfig, out: &Path) -> Result<Progress> {
    fsutil::write_json(&out.join(CONFIG_STAMP), cfg)?;
    let record = EvalRecord::new(cfg.datasets.len())?;
    write_record(&out.join(RECORD), &record)?;
    Ok(Progress {
        manifest: RunManifest {
            format: MANIFEST_FORMAT,
            label: cfg.label.clone(),
            strategy: cfg.strategy.kind,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: CONFIG_STAMP.into(),
            datasets: cfg.datasets.iter().map(|d| d.name.clone()).collect(),
            record: RECORD.into(),
            steps: Vec::new(),
            complete: false,
        },
        record,
        params: cfg.net.init_params(cfg.seed)?,
        state: StrategyState::new(cfg.strategy)?,
    })
}

fn resume(cfg: &ResolvedConfig, out: &Path, datasets: &[PreparedDataset]) -> Result<Option<Progress>> {
    if !out.join(MANIFEST).is_file() {
        return Ok(None);
    }
    let mut manifest = RunManifest::load(out)?;
    if manifest.config_hash != cfg.hash() {
        return Err(Error::Config(format!("{}: configuration differs from the run being resumed", out.display())));
    }
    let done = manifest.steps.iter().take_while(|s| s.status == StepStatus::Completed).count();
    manifest.steps.truncate(done);
    manifest.complete = false;
    if done == 0 {
        return Ok(None);
    }
    let last = &manifest.steps[done - 1];
    let ckpt = load_checkpoint(&out.join(last.checkpoint.as_ref().expect("completed step")))?;
    let sources: Vec<&dyn SampleSource> = datasets.iter().map(|d| &d.data as &dyn SampleSource).collect();
    let state = load_strategy(&out.join(last.strategy_state.as_ref().expect("completed step")), &sources)?;
    let mut record = read_record(&out.join(&manifest.record))?;
    // Drop rows of steps that did not complete.
    let mut trimmed = EvalRecord::new(record.datasets())?;
    for (j, k, m) in record.entries() {
        if k < done {
            trimmed.set(j, k, *m)?;
        }
    }
    record = trimmed;
    if state.datasets_seen != done || ckpt.datasets_trained != done {
        return Err(Error::Config(format!("{}: checkpoint and manifest disagree on progress", out.display())));
    }
    log::info!("resuming {} after {done} datasets", out.display());
    Ok(Some(Progress {
        manifest,
        record,
        params: ckpt.params,
        state,
    }))
}

/// Runs (or resumes) a full sequence into `out`.
pub fn run_sequence(cfg: &ResolvedConfig, out: &Path, opts: RunOptions) -> Result<RunManifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let datasets = prepare_datasets(cfg)?;
    let mut p = match opts.resume {
        true => match resume(cfg, out, &datasets)? {
            Some(p) => p,
            None => fresh(cfg, out)?,
        },
        false => fresh(cfg, out)?,
    };
    let start = p.manifest.steps.len();
    for k in start..datasets.len() {
        if opts.stop_after == Some(k) {
            break;
        }
        let d = &datasets[k];
        log::info!("{}: training on dataset {k} ({})", cfg.label, d.name);
        let t = Instant::now();
        let data = TrainData {
            source: &d.data,
            indices: &d.split.train,
        };
        let trained = match (k, &cfg.pretrained) {
            (0, Some(path)) => pretrained_start(cfg, path, &mut p.state, data),
            _ => p.state.train_on_dataset(&cfg.net, &p.params, data, &cfg.train, cfg.seed),
        };
        let (params, log) = match trained {
            Ok(r) => r,
            Err(e) => {
                p.manifest.steps.push(StepRecord {
                    dataset: k,
                    name: d.name.clone(),
                    status: StepStatus::Failed,
                    checkpoint: None,
                    strategy_state: None,
                    train_log: None,
                    train_seconds: t.elapsed().as_secs_f64(),
                    eval_seconds: 0.0,
                    empty_frames: 0,
                    error: Some(e.to_string()),
                });
                fsutil::write_json(&out.join(MANIFEST), &p.manifest)?;
                return Err(e.into());
            }
        };
        let train_seconds = t.elapsed().as_secs_f64();
        p.params = params;
        let (ck, st, lg) = step_paths(k);
        save_checkpoint(
            &out.join(&ck),
            &Checkpoint {
                net: cfg.net.clone(),
                params: p.params.clone(),
                seed: cfg.seed,
                datasets_trained: k + 1,
            },
        )?;
        save_strategy(&out.join(&st), &p.state)?;
        fsutil::write_json(&out.join(&lg), &log)?;

        let t = Instant::now();
        let mut empty = 0;
        for (j, e) in datasets[..=k].iter().enumerate() {
            let m = evaluate_params(&cfg.net, &p.params, &e.data, &e.split.eval, e.cap, cfg.eval.averaging, cfg.eval.parallel)?;
            empty += m.empty_frames;
            p.record.set(j, k, m.metrics)?;
            log::info!("{}: after {k}, dataset {j} MAE {:.1} mm", cfg.label, m.metrics.mae);
        }
        write_record(&out.join(RECORD), &p.record)?;
        p.manifest.steps.push(StepRecord {
            dataset: k,
            name: d.name.clone(),
            status: StepStatus::Completed,
            checkpoint: Some(ck),
            strategy_state: Some(st),
            train_log: Some(lg),
            train_seconds,
            eval_seconds: t.elapsed().as_secs_f64(),
            empty_frames: empty,
            error: None,
        });
        fsutil::write_json(&out.join(MANIFEST), &p.manifest)?;
    }
    p.manifest.complete = p.record.is_complete();
    fsutil::write_json(&out.join(MANIFEST), &p.manifest)?;
    Ok(p.manifest)
}

/// Starts from a pretrained checkpoint instead of training on the first
/// dataset; the strategy still records its anchor and buffer for it.
fn pretrained_start(
    cfg: &ResolvedConfig,
    path: &Path,
    state: &mut StrategyState,
    data: TrainData<'_>,
) -> depthcl_core::Result<(ParamVector, depthcl_core::continual::TrainLog)> {
    let ckpt = load_checkpoint(path).map_err(|e| depthcl_core::Error::Contract(e.to_string()))?;
    if ckpt.net != cfg.net {
        return Err(depthcl_core::Error::Contract(format!("{}: network differs from the configured one", path.display())));
    }
    let bookkeeping = TrainConfig {
        epochs: 0,
        ..cfg.train.clone()
    };
    state.train_on_dataset(&cfg.net, &ckpt.params, data, &bookkeeping, cfg.seed)
}

/// Manifest and record of a run directory.
pub fn load_run(dir: &Path) -> Result<(RunManifest, EvalRecord, ResolvedConfig)> {
    let m = RunManifest::load(dir)?;
    let record = read_record(&dir.join(&m.record))?;
    let cfg = fsutil::read_json(&dir.join(&m.config))?;
    Ok((m, record, cfg))
}
