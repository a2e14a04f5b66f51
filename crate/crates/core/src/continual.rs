//! Continual-learning strategies around one shared training loop.
//!
//! The finetune baseline minimises the unsupervised objective alone. The
//! other strategies add a regulariser (EWC, LwF, ANCL) or change how batches
//! are drawn (replay, CMP). All state that outlives a dataset lives in
//! [`StrategyState`] and is updated by [`StrategyState::train_on_dataset`].

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Sample, SampleSource};
use crate::diff::{AdamState, Array, Graph, OptimizerConfig, ParamVector, Var};
use crate::error::{contract, Error, Result};
use crate::losses::{total_loss, LossConfig};
use crate::model::{bind_params, cosine_similarity, depth_net_forward, encode_representation, DepthNetConfig};
use crate::rng::{self, stream};

/// Diagonal Fisher information, aligned with a flattened [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiag {
    values: Vec<f64>,
}

impl FisherDiag {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(contract!("Fisher entries must be finite and >= 0"));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Running mean of squared gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FisherAccumulator {
    sum: Vec<f64>,
    count: u64,
}

impl FisherAccumulator {
    pub fn observe(&mut self, grad: &[f64]) -> Result<()> {
        if self.count == 0 {
            self.sum = vec![0.0; grad.len()];
        } else if grad.len() != self.sum.len() {
            return Err(contract!("Fisher observation has {} entries, expected {}", grad.len(), self.sum.len()));
        }
        for (s, g) in self.sum.iter_mut().zip(grad) {
            *s += g * g;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn mean(&self) -> Result<FisherDiag> {
        if self.count == 0 {
            return Err(contract!("Fisher estimate needs at least one observation"));
        }
        let n = self.count as f64;
        FisherDiag::new(self.sum.iter().map(|s| s / n).collect())
    }
}

/// Flat gradient of `root` with respect to `leaves`, in leaf order.
fn flat_gradient(g: &Graph, root: Var, leaves: &[Var], len: usize) -> Result<Vec<f64>> {
    let grads = g.backward(root)?;
    let mut out = Vec::with_capacity(len);
    for &leaf in leaves {
        match grads.get(leaf) {
            Some(a) => out.extend_from_slice(a.data()),
            None => out.extend(core::iter::repeat_n(0.0, g.shape(leaf).iter().product())),
        }
    }
    Ok(out)
}

/// Unsupervised loss of one sample, optionally plus an LwF term against
/// `frozen`, and its gradient with respect to `params`.
fn sample_objective(
    net: &DepthNetConfig,
    params: &ParamVector,
    sample: &Sample,
    loss: &LossConfig,
    lwf: Option<(&Array, f64)>,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let leaves = bind_params(&mut g, params, true)?;
    let out = net.forward(&mut g, &leaves, &sample.image, &sample.sparse, &sample.mask)?;
    let mut root = total_loss(&mut g, sample, out.depth, loss)?.total;
    if let Some((frozen, lambda)) = lwf {
        let p = lwf_penalty(&mut g, out.depth, frozen, lambda)?;
        root = g.add(root, p)?;
    }
    let value = g.value(root).data()[0];
    Ok((value, flat_gradient(&g, root, &leaves, params.len())?))
}

/// Mean squared per-sample gradient of the unsupervised loss over at most
/// `max_samples` of `indices` (a seeded subsample when there are more).
pub fn estimate_fisher(
    net: &DepthNetConfig,
    params: &ParamVector,
    source: &dyn SampleSource,
    indices: &[usize],
    max_samples: usize,
    loss: &LossConfig,
    seed: u64,
) -> Result<FisherDiag> {
    if indices.is_empty() || max_samples == 0 {
        return Err(contract!("Fisher estimate needs at least one sample"));
    }
    let chosen: Vec<usize> = if indices.len() > max_samples {
        let mut r = rng::rng_for(seed, &[stream::FISHER]);
        let mut pick: Vec<usize> = rand::seq::index::sample(&mut r, indices.len(), max_samples).into_iter().collect();
        pick.sort_unstable();
        pick.into_iter().map(|i| indices[i]).collect()
    } else {
        indices.to_vec()
    };
    let mut acc = FisherAccumulator::default();
    for i in chosen {
        let (_, grad) = sample_objective(net, params, &source.sample(i)?, loss, None)?;
        acc.observe(&grad)?;
    }
    acc.mean()
}

/// `scale · Σ_i ½ w_i (θ_i − a_i)²` on a flat `[P]` parameter leaf.
fn weighted_quadratic(g: &mut Graph, theta: Var, anchor: &[f64], weights: &[f64], scale: f64) -> Result<Var> {
    let n = g.value(theta).len();
    if g.shape(theta) != [n] || anchor.len() != n || weights.len() != n {
        return Err(contract!(
            "penalty needs aligned lengths: params {}, anchor {}, Fisher {}",
            n,
            anchor.len(),
            weights.len()
        ));
    }
    let a = g.constant(Array::new(&[n], anchor.to_vec())?)?;
    let half_w = g.constant(Array::new(&[n], weights.iter().map(|w| 0.5 * w).collect())?)?;
    let d = g.sub(theta, a)?;
    let sq = g.square(d)?;
    let weighted = g.mul(sq, half_w)?;
    let s = g.sum(weighted)?;
    g.mul_scalar(s, scale)
}

/// `λ Σ_i ½ F_i (θ_i − θ*_i)²` where `theta` is a flat `[P]` leaf.
pub fn ewc_penalty(g: &mut Graph, theta: Var, anchor: &[f64], fisher: &FisherDiag, lambda: f64) -> Result<Var> {
    weighted_quadratic(g, theta, anchor, fisher.values(), lambda)
}

/// `λ_ewc Σ_i ½ F_i (θ_i − θ*_i)² + λ_aux Σ_i ½ F_aux,i (θ_i − θ_aux,i)²`
#[allow(clippy::too_many_arguments)]
pub fn ancl_penalty(
    g: &mut Graph,
    theta: Var,
    anchor: &[f64],
    aux: &[f64],
    fisher: &FisherDiag,
    fisher_aux: &FisherDiag,
    lambda_ewc: f64,
    lambda_aux: f64,
) -> Result<Var> {
    let stable = weighted_quadratic(g, theta, anchor, fisher.values(), lambda_ewc)?;
    let plastic = weighted_quadratic(g, theta, aux, fisher_aux.values(), lambda_aux)?;
    if lambda_aux == 0.0 {
        return Ok(stable);
    }
    g.add(stable, plastic)
}

/// `λ · mean((current − frozen)²)`; `frozen` enters as a constant.
pub fn lwf_penalty(g: &mut Graph, current: Var, frozen: &Array, lambda: f64) -> Result<Var> {
    if g.shape(current) != frozen.shape() {
        return Err(contract!("LwF outputs differ in shape: {:?} vs {:?}", g.shape(current), frozen.shape()));
    }
    let f = g.constant(frozen.clone())?;
    let d = g.sub(current, f)?;
    let sq = g.square(d)?;
    let m = g.mean(sq)?;
    g.mul_scalar(m, lambda)
}

/// Value and flat gradient of a penalty built on a flat parameter leaf.
pub fn penalty_gradient(theta: &[f64], build: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let leaf = g.param(Array::new(&[theta.len()], theta.to_vec())?)?;
    let root = build(&mut g, leaf)?;
    let value = g.value(root).data()[0];
    Ok((value, flat_gradient(&g, root, &[leaf], theta.len())?))
}

/// Stored samples of one finished dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub dataset: usize,
    /// Indices into the dataset the samples were taken from.
    pub indices: Vec<usize>,
    pub samples: Vec<Sample>,
}

/// Bounded per-dataset store of past samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(contract!("replay capacity must be >= 1"));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, entry: BufferEntry) -> Result<()> {
        if entry.indices.len() != entry.samples.len() {
            return Err(contract!("buffer entry has {} indices for {} samples", entry.indices.len(), entry.samples.len()));
        }
        if entry.samples.len() > self.capacity {
            return Err(contract!("buffer entry of {} samples exceeds capacity {}", entry.samples.len(), self.capacity));
        }
        if self.entries.iter().any(|e| e.dataset == entry.dataset) {
            return Err(contract!("dataset {} is already buffered", entry.dataset));
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Sample counts of one composed batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayCounts {
    pub new: usize,
    /// Per previous dataset, in buffer order.
    pub replay: Vec<usize>,
}

/// `⌈B/2⌉` new and `⌊B/2⌋` replay samples split evenly over `previous`
/// datasets, remainder to the lowest dataset indices. With no previous
/// dataset the whole batch is new.
pub fn replay_counts(batch: usize, previous: usize) -> Result<ReplayCounts> {
    if batch < 2 {
        return Err(contract!("replay batches need B >= 2, got {}", batch));
    }
    if previous == 0 {
        return Ok(ReplayCounts {
            new: batch,
            replay: Vec::new(),
        });
    }
    let r = batch / 2;
    let replay = (0..previous).map(|i| r / previous + usize::from(i < r % previous)).collect();
    Ok(ReplayCounts {
        new: batch - r,
        replay,
    })
}

/// One element of a composed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchItem {
    /// Index into the current dataset.
    New(usize),
    /// Position in the replay buffer.
    Replay { entry: usize, slot: usize },
}

/// Draws a batch per [`replay_counts`]. New samples are taken from the front
/// of `new_pool` (cycling if it is short); replay samples are drawn uniformly
/// from each buffer entry, without replacement when the entry is large
/// enough.
pub fn replay_compose_batch(new_pool: &[usize], buffer: &ReplayBuffer, batch: usize, rng: &mut rng::Rng) -> Result<Vec<BatchItem>> {
    if new_pool.is_empty() {
        return Err(contract!("replay batch needs a non-empty pool of new samples"));
    }
    if let Some(e) = buffer.entries.iter().find(|e| e.samples.is_empty()) {
        return Err(contract!("replay buffer entry for dataset {} is empty", e.dataset));
    }
    let counts = replay_counts(batch, buffer.entries.len())?;
    let mut items: Vec<BatchItem> = (0..counts.new).map(|i| BatchItem::New(new_pool[i % new_pool.len()])).collect();
    for (entry, (&c, e)) in counts.replay.iter().zip(&buffer.entries).enumerate() {
        let len = e.samples.len();
        if c <= len {
            items.extend(rand::seq::index::sample(rng, len, c).into_iter().map(|slot| BatchItem::Replay { entry, slot }));
        } else {
            items.extend((0..c).map(|_| BatchItem::Replay {
                entry,
                slot: rng.gen_range(0..len),
            }));
        }
    }
    Ok(items)
}

/// CMP admission rule: store the candidate iff its cosine similarity to the
/// stored sample is strictly below `delta`.
pub fn cmp_should_store(candidate: &[f64], stored: &[f64], delta: f64) -> Result<bool> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(contract!("CMP threshold must lie in (0, 1], got {}", delta));
    }
    Ok(cosine_similarity(candidate, stored)? < delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    #[default]
    Finetune,
    Ewc,
    Lwf,
    Replay,
    Cmp,
    Ancl,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [Self::Finetune, Self::Ewc, Self::Lwf, Self::Replay, Self::Cmp, Self::Ancl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Finetune => "finetune",
            Self::Ewc => "ewc",
            Self::Lwf => "lwf",
            Self::Replay => "replay",
            Self::Cmp => "cmp",
            Self::Ancl => "ancl",
        }
    }

    fn uses_fisher(self) -> bool {
        matches!(self, Self::Ewc | Self::Ancl)
    }

    fn uses_buffer(self) -> bool {
        matches!(self, Self::Replay | Self::Cmp)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| contract!("unknown strategy `{}`", s))
    }
}

/// How the Fisher diagonal of a finished dataset is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherMode {
    /// Running mean of per-sample squared gradients over every epoch.
    #[default]
    Accumulated,
    /// As `Accumulated`, restarted at each epoch.
    LastEpoch,
    /// A separate pass over the training split after training.
    PostHoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub lambda_ewc: f64,
    pub lambda_lwf: f64,
    pub lambda_aux: f64,
    /// CMP similarity threshold.
    pub delta: f64,
    /// Replay buffer size per dataset.
    pub capacity: usize,
    /// Keep an EWC/ANCL anchor for every past dataset instead of only the
    /// previous one.
    pub multi_anchor: bool,
    pub fisher_mode: FisherMode,
    /// Cap on samples for a post-hoc Fisher pass.
    pub fisher_samples: usize,
    /// Candidates examined when filling a CMP buffer entry.
    pub cmp_candidates: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Finetune,
            lambda_ewc: 1.0,
            lambda_lwf: 0.5,
            lambda_aux: 0.5,
            delta: 0.9,
            capacity: 64,
            multi_anchor: false,
            fisher_mode: FisherMode::Accumulated,
            fisher_samples: 512,
            cmp_candidates: 512,
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_ewc, self.lambda_lwf, self.lambda_aux];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(contract!("strategy weights must be finite and >= 0"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(contract!("CMP threshold must lie in (0, 1], got {}", self.delta));
        }
        if self.capacity == 0 || self.fisher_samples == 0 || self.cmp_candidates == 0 {
            return Err(contract!("buffer capacity and sample caps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    /// Stop after this many steps on a dataset even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 8,
            optimizer: OptimizerConfig {
                lr: 1e-3,
                ..OptimizerConfig::default()
            },
            loss: LossConfig::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(contract!("batch size must be >= 2"));
        }
        if !(self.optimizer.lr > 0.0) || !self.optimizer.lr.is_finite() {
            return Err(contract!("learning rate must be positive"));
        }
        self.loss.weights.validate()
    }
}

/// Frozen parameters of a finished dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub dataset: usize,
    pub params: ParamVector,
    /// Present for EWC and ANCL.
    pub fisher: Option<FisherDiag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub dataset: usize,
    /// Total loss of every step, penalties included.
    pub losses: Vec<f64>,
    pub epochs: Vec<EpochSummary>,
    pub steps: usize,
}

/// The training split of one dataset.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub source: &'a dyn SampleSource,
    pub indices: &'a [usize],
}

/// Everything a strategy carries from one dataset to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyState {
    pub config: StrategyConfig,
    /// Number of datasets trained so far; the next dataset gets this id.
    pub datasets_seen: usize,
    /// Previous-model anchors (EWC, LwF, ANCL); oldest first.
    pub anchors: Vec<Anchor>,
    /// Stored past samples (replay, CMP).
    pub buffer: Option<ReplayBuffer>,
}

impl StrategyState {
    pub fn new(config: StrategyConfig) -> Result<Self> {
        config.validate()?;
        let buffer = if config.kind.uses_buffer() {
            Some(ReplayBuffer::new(config.capacity)?)
        } else {
            None
        };
        Ok(Self {
            config,
            datasets_seen: 0,
            anchors: Vec::new(),
            buffer,
        })
    }

    /// Checks that the fields present match the variant and the number of
    /// datasets seen.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let kind = self.config.kind;
        let anchored = matches!(kind, StrategyKind::Ewc | StrategyKind::Lwf | StrategyKind::Ancl);
        if !anchored && !self.anchors.is_empty() {
            return Err(contract!("{} keeps no anchors", kind));
        }
        if anchored && self.datasets_seen > 0 && self.anchors.is_empty() {
            return Err(contract!("{} state is missing its anchor", kind));
        }
        if self.anchors.iter().any(|a| a.dataset >= self.datasets_seen || a.fisher.is_some() != kind.uses_fisher()) {
            return Err(contract!("{} anchors are inconsistent with the datasets seen", kind));
        }
        match (&self.buffer, kind.uses_buffer()) {
            (None, false) => Ok(()),
            (Some(b), true) => {
                if b.capacity != self.config.capacity || b.entries.iter().any(|e| e.dataset >= self.datasets_seen) {
                    return Err(contract!("replay buffer is inconsistent with the datasets seen"));
                }
                if b.entries.len() != self.datasets_seen {
                    return Err(contract!("replay buffer holds {} datasets, {} were seen", b.entries.len(), self.datasets_seen));
                }
                Ok(())
            }
            _ => Err(contract!("{} state has the wrong buffer presence", kind)),
        }
    }

    /// Trains on the next dataset and updates anchors, Fisher and buffers.
    /// On error the state is left untouched and the caller keeps `params`.
    pub fn train_on_dataset(
        &mut self,
        net: &DepthNetConfig,
        params: &ParamVector,
        data: TrainData<'_>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<(ParamVector, TrainLog)> {
        self.validate()?;
        cfg.validate()?;
        net.check_params(params)?;
        if data.indices.is_empty() {
            return Err(contract!("training split is empty"));
        }
        let k = self.datasets_seen;
        let kind = self.config.kind;
        let mut rng = rng::rng_for(seed, &[stream::TRAIN, k as u64]);
        let mut theta = params.clone();
        let mut adam = AdamState::new(theta.len());
        let mut fisher = FisherAccumulator::default();
        let mut log = TrainLog {
            dataset: k,
            ..TrainLog::default()
        };

        let previous = self.anchors.last().map(|a| &a.params);
        let lwf_anchor = if kind == StrategyKind::Lwf { previous } else { None };
        // ANCL's auxiliary model restarts from the previous parameters on
        // every dataset and has its own optimizer.
        let mut aux = match (kind, previous) {
            (StrategyKind::Ancl, Some(p)) => Some((p.clone(), AdamState::new(p.len()))),
            _ => None,
        };
        let empty = ReplayBuffer::new(1)?;
        let buffer = self.buffer.as_ref().unwrap_or(&empty);
        let per_batch_new = replay_counts(cfg.batch_size, buffer.entries.len())?.new;
        let steps_per_epoch = data.indices.len().div_ceil(per_batch_new);
        let max_steps = cfg.max_steps.unwrap_or(usize::MAX);

        let mut order = data.indices.to_vec();
        'epochs: for epoch in 0..cfg.epochs {
            if log.steps >= max_steps {
                break;
            }
            if self.config.fisher_mode == FisherMode::LastEpoch {
                fisher.reset();
            }
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut epoch_steps = 0;
            for step in 0..steps_per_epoch {
                if log.steps >= max_steps {
                    log.epochs.push(EpochSummary {
                        epoch,
                        steps: epoch_steps,
                        mean_loss: epoch_loss / epoch_steps.max(1) as f64,
                    });
                    break 'epochs;
                }
                let pool: Vec<usize> = (0..per_batch_new).map(|i| order[(step * per_batch_new + i) % order.len()]).collect();
                let items = replay_compose_batch(&pool, buffer, cfg.batch_size, &mut rng)?;
                let n_new = items.iter().filter(|i| matches!(i, BatchItem::New(_))).count();
                let n_replay = items.len() - n_new;

                let mut grad = vec![0.0; theta.len()];
                let mut loss = 0.0;
                let mut new_samples = Vec::with_capacity(n_new);
                for item in &items {
                    let (sample, weight) = match *item {
                        BatchItem::New(i) => (data.source.sample(i)?, 1.0 / n_new as f64),
                        BatchItem::Replay { entry, slot } => (buffer.entries[entry].samples[slot].clone(), 1.0 / n_replay as f64),
                    };
                    let frozen = match lwf_anchor {
                        Some(p) => Some(depth_net_forward(net, p, &sample)?),
                        None => None,
                    };
                    let lwf = frozen.as_ref().map(|f| (f, self.config.lambda_lwf));
                    let (value, g) = sample_objective(net, &theta, &sample, &cfg.loss, lwf)?;
                    if kind.uses_fisher() && matches!(item, BatchItem::New(_)) {
                        fisher.observe(&g)?;
                    }
                    loss += weight * value;
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += weight * b;
                    }
                    if aux.is_some() {
                        new_samples.push(sample);
                    }
                }

                if kind.uses_fisher() {
                    let flat = theta.flatten();
                    for anchor in &self.anchors {
                        let f = anchor.fisher.as_ref().expect("validated");
                        let a = anchor.params.flatten();
                        let (value, g) = match &aux {
                            Some((aux_params, _)) if anchor.dataset + 1 == k => {
                                let x = aux_params.flatten();
                                let (le, la) = (self.config.lambda_ewc, self.config.lambda_aux);
                                penalty_gradient(&flat, |g, t| ancl_penalty(g, t, &a, &x, f, f, le, la))?
                            }
                            _ => penalty_gradient(&flat, |g, t| ewc_penalty(g, t, &a, f, self.config.lambda_ewc))?,
                        };
                        loss += value;
                        for (x, y) in grad.iter_mut().zip(&g) {
                            *x += y;
                        }
                    }
                }

                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NumericFailure { op: "train_step" });
                }
                let grads = theta.unflatten(&grad)?;
                adam.step(&mut theta, &grads, &cfg.optimizer)?;

                if let Some((aux_params, aux_adam)) = aux.as_mut() {
                    let mut ag = vec![0.0; aux_params.len()];
                    let w = 1.0 / new_samples.len() as f64;
                    for s in &new_samples {
                        let (_, g) = sample_objective(net, aux_params, s, &cfg.loss, None)?;
                        for (a, b) in ag.iter_mut().zip(&g) {
                            *a += w * b;
                        }
                    }
                    if ag.iter().any(|g| !g.is_finite()) {
                        return Err(Error::NumericFailure { op: "aux_step" });
                    }
                    let ag = aux_params.unflatten(&ag)?;
                    aux_adam.step(aux_params, &ag, &cfg.optimizer)?;
                }

                log.losses.push(loss);
                log.steps += 1;
                epoch_loss += loss;
                epoch_steps += 1;
            }
            log::debug!("dataset {k} epoch {epoch}: {epoch_steps} steps, mean loss {}", epoch_loss / epoch_steps.max(1) as f64);
            log.epochs.push(EpochSummary {
                epoch,
                steps: epoch_steps,
                mean_loss: epoch_loss / epoch_steps.max(1) as f64,
            });
        }

        let fisher = if kind.uses_fisher() {
            Some(if self.config.fisher_mode == FisherMode::PostHoc || fisher.count() == 0 {
                estimate_fisher(net, &theta, data.source, data.indices, self.config.fisher_samples, &cfg.loss, rng::derive_seed(seed, &[k as u64]))?
            } else {
                fisher.mean()?
            })
        } else {
            None
        };
        let entry = match kind {
            StrategyKind::Replay => Some(self.select_uniform(data, seed, k)?),
            StrategyKind::Cmp => Some(self.select_cmp(net, &theta, data, seed, k)?),
            _ => None,
        };

        // Commit only once everything above has succeeded.
        if matches!(kind, StrategyKind::Ewc | StrategyKind::Lwf | StrategyKind::Ancl) {
            if !(self.config.multi_anchor && kind.uses_fisher()) {
                self.anchors.clear();
            }
            self.anchors.push(Anchor {
                dataset: k,
                params: theta.clone(),
                fisher,
            });
        }
        if let (Some(entry), Some(buffer)) = (entry, self.buffer.as_mut()) {
            buffer.insert(entry)?;
        }
        self.datasets_seen += 1;
        Ok((theta, log))
    }

    fn select_uniform(&self, data: TrainData<'_>, seed: u64, k: usize) -> Result<BufferEntry> {
        let mut r = rng::rng_for(seed, &[stream::BUFFER, k as u64]);
        let n = self.config.capacity.min(data.indices.len());
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut r, data.indices.len(), n)
            .into_iter()
            .map(|i| data.indices[i])
            .collect();
        picks.sort_unstable();
        let samples = picks.iter().map(|&i| data.source.sample(i)).collect::<Result<Vec<_>>>()?;
        Ok(BufferEntry {
            dataset: k,
            indices: picks,
            samples,
        })
    }

    /// Scans a seeded sample of candidates and admits each one whose
    /// representation is dissimilar to a uniformly drawn stored sample. The
    /// very first candidate of an empty buffer is admitted outright, and an
    /// entry never ends up empty: if nothing passes, the least similar
    /// candidate is kept.
    fn select_cmp(&self, net: &DepthNetConfig, params: &ParamVector, data: TrainData<'_>, seed: u64, k: usize) -> Result<BufferEntry> {
        let mut r = rng::rng_for(seed, &[stream::BUFFER, k as u64]);
        let mut candidates = data.indices.to_vec();
        candidates.shuffle(&mut r);
        candidates.truncate(self.config.cmp_candidates);

        let mut stored: Vec<Vec<f64>> = Vec::new();
        if let Some(b) = &self.buffer {
            for e in &b.entries {
                for s in &e.samples {
                    stored.push(encode_representation(net, params, s)?);
                }
            }
        }
        let mut entry = BufferEntry {
            dataset: k,
            indices: Vec::new(),
            samples: Vec::new(),
        };
        let mut fallback: Option<(f64, usize, Sample)> = None;
        for &i in &candidates {
            if entry.samples.len() == self.config.capacity {
                break;
            }
            let sample = data.source.sample(i)?;
            let rep = encode_representation(net, params, &sample)?;
            let admit = if stored.is_empty() {
                true
            } else {
                let other = &stored[r.gen_range(0..stored.len())];
                let sim = cosine_similarity(&rep, other)?;
                if fallback.as_ref().is_none_or(|(best, _, _)| sim < *best) {
                    fallback = Some((sim, i, sample.clone()));
                }
                cmp_should_store(&rep, other, self.config.delta)?
            };
            if admit {
                entry.indices.push(i);
                entry.samples.push(sample);
                stored.push(rep);
            }
        }
        if entry.samples.is_empty() {
            let (_, i, s) = fallback.ok_or_else(|| contract!("CMP found no candidate to store"))?;
            entry.indices.push(i);
            entry.samples.push(s);
        }
        Ok(entry)
    }
}
