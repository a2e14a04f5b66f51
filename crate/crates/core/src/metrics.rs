//! Per-frame depth-completion errors and sequence-level continual-learning
//! metrics.
//!
//! Frame errors follow the usual depth-completion units: MAE/RMSE in
//! millimetres, iMAE/iRMSE in 1/km. A sequence of `N` datasets produces a
//! lower-triangular record `a_j^k` (metric on dataset `j` after training on
//! dataset `k`, `j ≤ k`), from which average forgetting, average performance
//! and the stability-plasticity trade-off are computed.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::SampleSource;
use crate::diff::{Array, ParamVector};
use crate::error::{contract, Error, Result};
use crate::model::{depth_net_forward, DepthNetConfig};

/// Sum by recursive halving; the result depends only on the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// Ground-truth depths outside `[min, max]` are not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeCap {
    pub min: f64,
    pub max: f64,
}

impl RangeCap {
    pub const INDOOR: RangeCap = RangeCap { min: 0.2, max: 5.0 };
    pub const OUTDOOR_100: RangeCap = RangeCap { min: 0.001, max: 100.0 };
    pub const OUTDOOR_80: RangeCap = RangeCap { min: 0.001, max: 80.0 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        let cap = Self { min, max };
        cap.validate()?;
        Ok(cap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max > self.min && self.max.is_finite()) {
            return Err(contract!("range cap needs 0 < min < max, got [{}, {}]", self.min, self.max));
        }
        Ok(())
    }

    fn contains(&self, d: f64) -> bool {
        d >= self.min && d <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Rmse,
    Imae,
    Irmse,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mae, Metric::Rmse, Metric::Imae, Metric::Irmse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Imae => "imae",
            Metric::Irmse => "irmse",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Metric::Mae | Metric::Rmse => "mm",
            Metric::Imae | Metric::Irmse => "1/km",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| contract!("unknown metric `{}`", name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    /// Millimetres.
    pub mae: f64,
    /// Millimetres.
    pub rmse: f64,
    /// 1/km.
    pub imae: f64,
    /// 1/km.
    pub irmse: f64,
}

impl FrameMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
            Metric::Imae => self.imae,
            Metric::Irmse => self.irmse,
        }
    }
}

/// Error sums of one frame over its evaluation mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub count: usize,
    pub abs: f64,
    pub sq: f64,
    pub inv_abs: f64,
    pub inv_sq: f64,
}

impl FrameStats {
    pub fn metrics(&self) -> FrameMetrics {
        let n = self.count as f64;
        FrameMetrics {
            mae: 1000.0 * self.abs / n,
            rmse: 1000.0 * libm::sqrt(self.sq / n),
            imae: 1000.0 * self.inv_abs / n,
            irmse: 1000.0 * libm::sqrt(self.inv_sq / n),
        }
    }
}

/// Error sums over pixels whose truth is valid (non-zero) and inside `cap`.
pub fn frame_stats(pred: &Array, truth: &Array, cap: RangeCap) -> Result<FrameStats> {
    cap.validate()?;
    if pred.shape() != truth.shape() {
        return Err(contract!("prediction {:?} and truth {:?} differ in shape", pred.shape(), truth.shape()));
    }
    let mut abs = Vec::new();
    let mut inv = Vec::new();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        if t == 0.0 || !cap.contains(t) {
            continue;
        }
        if !(p > 0.0) || !p.is_finite() {
            return Err(contract!("prediction must be positive and finite where evaluated, got {}", p));
        }
        abs.push(libm::fabs(p - t));
        inv.push(libm::fabs(1.0 / p - 1.0 / t));
    }
    if abs.is_empty() {
        return Err(Error::EmptyMask);
    }
    let sq: Vec<f64> = abs.iter().map(|e| e * e).collect();
    let inv_sq: Vec<f64> = inv.iter().map(|e| e * e).collect();
    Ok(FrameStats {
        count: abs.len(),
        abs: pairwise_sum(&abs),
        sq: pairwise_sum(&sq),
        inv_abs: pairwise_sum(&inv),
        inv_sq: pairwise_sum(&inv_sq),
    })
}

pub fn frame_metrics(pred: &Array, truth: &Array, cap: RangeCap) -> Result<FrameMetrics> {
    Ok(frame_stats(pred, truth, cap)?.metrics())
}

/// How frame errors are combined over an evaluation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Mean of per-frame metrics.
    #[default]
    PerFrame,
    /// Metrics of all evaluated pixels pooled together.
    PerPixel,
}

/// Split-level metrics plus the number of frames excluded for an empty mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub metrics: FrameMetrics,
    pub frames: usize,
    pub empty_frames: usize,
}

/// Combines per-frame results in order; `None` marks an empty-mask frame.
pub fn aggregate(frames: &[Option<FrameStats>], mode: Averaging) -> Result<SplitMetrics> {
    let stats: Vec<&FrameStats> = frames.iter().flatten().collect();
    if stats.is_empty() {
        return Err(Error::EmptyMask);
    }
    let sum = |f: &dyn Fn(&FrameStats) -> f64| pairwise_sum(&stats.iter().map(|s| f(s)).collect::<Vec<_>>());
    let metrics = match mode {
        Averaging::PerFrame => {
            let n = stats.len() as f64;
            let per: Vec<FrameMetrics> = stats.iter().map(|s| s.metrics()).collect();
            let mean = |m: Metric| pairwise_sum(&per.iter().map(|f| f.get(m)).collect::<Vec<_>>()) / n;
            FrameMetrics {
                mae: mean(Metric::Mae),
                rmse: mean(Metric::Rmse),
                imae: mean(Metric::Imae),
                irmse: mean(Metric::Irmse),
            }
        }
        Averaging::PerPixel => FrameStats {
            count: stats.iter().map(|s| s.count).sum(),
            abs: sum(&|s| s.abs),
            sq: sum(&|s| s.sq),
            inv_abs: sum(&|s| s.inv_abs),
            inv_sq: sum(&|s| s.inv_sq),
        }
        .metrics(),
    };
    Ok(SplitMetrics {
        metrics,
        frames: stats.len(),
        empty_frames: frames.len() - stats.len(),
    })
}

/// Frame statistics of one sample; `Ok(None)` when its mask is empty.
pub fn evaluate_frame(net: &DepthNetConfig, params: &ParamVector, source: &dyn SampleSource, index: usize, cap: RangeCap) -> Result<Option<FrameStats>> {
    let sample = source.sample(index)?;
    let truth = sample
        .ground_truth
        .as_ref()
        .ok_or_else(|| contract!("sample {} has no ground truth", index))?;
    let pred = depth_net_forward(net, params, &sample)?;
    match frame_stats(&pred, truth, cap) {
        Err(Error::EmptyMask) => Ok(None),
        other => other.map(Some),
    }
}

/// Sequential evaluation of `params` on `indices` of `source`.
pub fn evaluate_split(
    net: &DepthNetConfig,
    params: &ParamVector,
    source: &dyn SampleSource,
    indices: &[usize],
    cap: RangeCap,
    mode: Averaging,
) -> Result<SplitMetrics> {
    let frames = indices
        .iter()
        .map(|&i| evaluate_frame(net, params, source, i, cap))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&frames, mode)
}

/// Lower-triangular `N×N` record: `get(j, k)` is the result on dataset `j`
/// after training on dataset `k`, defined for `j ≤ k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    n: usize,
    cells: Vec<Option<FrameMetrics>>,
}

impl EvalRecord {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(contract!("a record needs at least one dataset"));
        }
        Ok(Self { n, cells: vec![None; n * n] })
    }

    pub fn datasets(&self) -> usize {
        self.n
    }

    fn slot(&self, j: usize, k: usize) -> Result<usize> {
        if j > k || k >= self.n {
            return Err(contract!("record entry (j={}, k={}) outside the lower triangle of size {}", j, k, self.n));
        }
        Ok(k * self.n + j)
    }

    pub fn set(&mut self, j: usize, k: usize, m: FrameMetrics) -> Result<()> {
        if Metric::ALL.iter().any(|&x| !m.get(x).is_finite() || m.get(x) < 0.0) {
            return Err(contract!("record entries must be finite and >= 0"));
        }
        let s = self.slot(j, k)?;
        self.cells[s] = Some(m);
        Ok(())
    }

    pub fn get(&self, j: usize, k: usize) -> Option<&FrameMetrics> {
        self.slot(j, k).ok().and_then(|s| self.cells[s].as_ref())
    }

    /// Number of populated entries.
    pub fn len(&self) -> usize {
        self.cells.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complete(&self) -> bool {
        self.len() == self.n * (self.n + 1) / 2
    }

    /// Populated entries as `(j, k, metrics)`, row by row.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &FrameMetrics)> + '_ {
        (0..self.n).flat_map(move |k| (0..=k).filter_map(move |j| self.get(j, k).map(|m| (j, k, m))))
    }

    /// Rows `a[k][j] = a_j^k` of one metric; the record must be complete.
    pub fn triangle(&self, metric: Metric) -> Result<Vec<Vec<f64>>> {
        if !self.is_complete() {
            return Err(Error::UndefinedMetric(alloc::format!("record has {} of {} entries", self.len(), self.n * (self.n + 1) / 2)));
        }
        Ok((0..self.n)
            .map(|k| (0..=k).map(|j| self.get(j, k).expect("complete").get(metric)).collect())
            .collect())
    }
}

fn check_triangle(rows: &[Vec<f64>]) -> Result<usize> {
    if rows.is_empty() {
        return Err(contract!("an empty record has no metrics"));
    }
    for (k, row) in rows.iter().enumerate() {
        if row.len() != k + 1 || row.iter().any(|v| !v.is_finite()) {
            return Err(contract!("row {} of the record must hold {} finite values", k, k + 1));
        }
    }
    Ok(rows.len())
}

/// `(2 / (N(N−1))) Σ_{k} Σ_{j<k} (a_j^k − a_j^j) / a_j^j`, in percent. Can be
/// negative when later training helps an earlier dataset.
pub fn avg_forgetting(rows: &[Vec<f64>]) -> Result<f64> {
    let n = check_triangle(rows)?;
    if n < 2 {
        return Err(Error::UndefinedMetric(alloc::string::String::from("average forgetting needs at least two datasets")));
    }
    if (0..n).any(|j| !(rows[j][j] > 0.0)) {
        return Err(Error::UndefinedMetric(alloc::string::String::from("average forgetting needs positive diagonal entries")));
    }
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    for (k, row) in rows.iter().enumerate() {
        for j in 0..k {
            terms.push((row[j] - rows[j][j]) / rows[j][j]);
        }
    }
    Ok(100.0 * pairwise_sum(&terms) / terms.len() as f64)
}

/// Mean over all `N(N+1)/2` entries.
pub fn avg_performance(rows: &[Vec<f64>]) -> Result<f64> {
    let n = check_triangle(rows)?;
    let all: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(pairwise_sum(&all) / (n * (n + 1) / 2) as f64)
}

/// Whether the stability and plasticity terms are summed or averaged over
/// datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SptoNorm {
    Sum,
    #[default]
    Mean,
}

/// Harmonic mean `2SP / (S + P)` of `S = Σ_k a_k^N` (final model) and
/// `P = Σ_k a_k^k` (just after training), each divided by `N` in mean mode.
pub fn spto(rows: &[Vec<f64>], norm: SptoNorm) -> Result<f64> {
    let n = check_triangle(rows)?;
    let mut s = pairwise_sum(&rows[n - 1]);
    let mut p = pairwise_sum(&(0..n).map(|k| rows[k][k]).collect::<Vec<_>>());
    if norm == SptoNorm::Mean {
        s /= n as f64;
        p /= n as f64;
    }
    if !(s > 0.0 && p > 0.0) {
        return Err(Error::UndefinedMetric(alloc::format!("SPTO needs S > 0 and P > 0, got S={s}, P={p}")));
    }
    Ok(2.0 * s * p / (s + p))
}
