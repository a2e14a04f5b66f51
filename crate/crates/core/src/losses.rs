//! The unsupervised depth-completion objective: photometric reconstruction
//! (colour + SSIM), sparse-depth consistency and edge-aware smoothness.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::diff::{Array, Conv2d, Graph, Var};
use crate::error::{contract, Result};
use crate::geometry::reconstruct_image;

/// SSIM stabilisers for a dynamic range of 1.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_ph: f64,
    pub w_sz: f64,
    pub w_sm: f64,
    pub w_co: f64,
    pub w_st: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_ph: 1.0,
            w_sz: 1.0,
            w_sm: 0.1,
            w_co: 0.15,
            w_st: 0.85,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_ph, self.w_sz, self.w_sm, self.w_co, self.w_st];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(self.w_co + self.w_st > 0.0) {
            return Err(contract!("loss weights must be finite and >= 0 with w_co + w_st > 0: {:?}", self));
        }
        Ok(())
    }

    /// `w_ph·ph + w_sz·sz + w_sm·sm`
    pub fn combine(&self, ph: f64, sz: f64, sm: f64) -> f64 {
        self.w_ph * ph + self.w_sz * sz + self.w_sm * sm
    }
}

/// Normalisation of the photometric term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhotometricNorm {
    /// Mean over valid pixels of each neighbour, averaged over neighbours.
    #[default]
    ValidMean,
    /// Sum over neighbours of masked per-pixel terms divided by `|Ω|`.
    Literal,
}

/// Normalisation of the sparse-depth term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparseNorm {
    /// Divide by the pixel count `|Ω|`.
    #[default]
    Pixels,
    /// Divide by the number of valid sparse points `|M|`.
    ValidPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub photometric_norm: PhotometricNorm,
    pub sparse_norm: SparseNorm,
    /// Treat every warped pixel as valid instead of masking out-of-view ones.
    pub no_view_mask: bool,
}

/// Per-channel 3x3 box filter with edge replication.
fn box3(g: &mut Graph, x: Var) -> Result<Var> {
    let (c, _, _) = g.value(x).chw()?;
    let k = g.constant(Array::full(&[c, 1, 3, 3], 1.0 / 9.0))?;
    g.conv2d(x, k, None, Conv2d::new(1, 1).replicate().groups(c))
}

/// Per-pixel, per-channel SSIM over 3x3 windows.
pub fn ssim(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(contract!("ssim shapes differ: {:?} vs {:?}", g.shape(a), g.shape(b)));
    }
    let mu_a = box3(g, a)?;
    let mu_b = box3(g, b)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = box3(g, aa)?;
    let e_bb = box3(g, bb)?;
    let e_ab = box3(g, ab)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let l_num = g.mul_scalar(mu_ab, 2.0)?;
    let l_num = g.add_scalar(l_num, SSIM_C1)?;
    let s_num = g.mul_scalar(cov, 2.0)?;
    let s_num = g.add_scalar(s_num, SSIM_C2)?;
    let num = g.mul(l_num, s_num)?;
    let l_den = g.add(mu_aa, mu_bb)?;
    let l_den = g.add_scalar(l_den, SSIM_C1)?;
    let s_den = g.add(var_a, var_b)?;
    let s_den = g.add_scalar(s_den, SSIM_C2)?;
    let den = g.mul(l_den, s_den)?;
    g.div(num, den)
}

pub fn ssim_values(a: &Array, b: &Array) -> Result<Array> {
    let mut g = Graph::new();
    let va = g.constant(a.clone())?;
    let vb = g.constant(b.clone())?;
    let s = ssim(&mut g, va, vb)?;
    Ok(g.value(s).clone())
}

fn repeat_channels(mask: &Array, c: usize) -> Result<Array> {
    let mut shape = mask.shape().to_vec();
    shape[0] *= c;
    Array::new(&shape, mask.data().repeat(c))
}

/// Photometric reconstruction error of `target` against warped neighbours.
///
/// Each reconstruction is `[C, H, W]` with a `[1, H, W]` validity mask. The
/// per-pixel error is `w_co·|Î − I| + w_st·(1 − SSIM(Î, I))`, averaged over
/// channels. A call where no neighbour has a valid pixel returns 0.
pub fn photometric_loss(g: &mut Graph, target: Var, recons: &[(Var, Array)], cfg: &LossConfig) -> Result<Var> {
    let w = cfg.weights;
    let (c, h, wd) = g.value(target).chw()?;
    let mut terms = Vec::with_capacity(recons.len());
    let mut literal_total = None;
    for (rec, valid) in recons {
        if g.shape(*rec) != g.shape(target) || valid.shape() != [1, h, wd] {
            return Err(contract!("reconstruction/mask shape mismatch"));
        }
        let count = valid.data().iter().filter(|&&m| m != 0.0).count();
        if count == 0 && cfg.photometric_norm == PhotometricNorm::ValidMean {
            continue;
        }
        let diff = g.sub(*rec, target)?;
        let ad = g.abs(diff)?;
        let co = g.mul_scalar(ad, w.w_co)?;
        let s = ssim(g, *rec, target)?;
        let dis = g.rsub_scalar(1.0, s)?;
        let st = g.mul_scalar(dis, w.w_st)?;
        let per_pixel = g.add(co, st)?;
        let mask = g.constant(repeat_channels(valid, c)?)?;
        let masked = g.mul(per_pixel, mask)?;
        let total = g.sum(masked)?;
        match cfg.photometric_norm {
            PhotometricNorm::ValidMean => terms.push(g.mul_scalar(total, 1.0 / (c * count) as f64)?),
            PhotometricNorm::Literal => {
                literal_total = Some(match literal_total {
                    None => total,
                    Some(acc) => g.add(acc, total)?,
                });
            }
        }
    }
    match cfg.photometric_norm {
        PhotometricNorm::Literal => match literal_total {
            Some(t) => g.mul_scalar(t, 1.0 / (c * h * wd) as f64),
            None => g.scalar(0.0),
        },
        PhotometricNorm::ValidMean => {
            if terms.is_empty() {
                log::warn!("photometric loss: no valid pixel in any reconstruction");
                return g.scalar(0.0);
            }
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t)?;
            }
            g.mul_scalar(acc, 1.0 / terms.len() as f64)
        }
    }
}

/// Checks `mask(x) = 1 ⟺ sparse(x) > 0` and binary entries.
pub fn check_sparse_mask(sparse: &Array, mask: &Array) -> Result<()> {
    if sparse.shape() != mask.shape() {
        return Err(contract!("sparse/mask shapes differ: {:?} vs {:?}", sparse.shape(), mask.shape()));
    }
    for (&z, &m) in sparse.data().iter().zip(mask.data()) {
        if !(m == 0.0 || m == 1.0) || (m == 1.0) != (z > 0.0) {
            return Err(contract!("sparse depth and validity mask disagree"));
        }
    }
    Ok(())
}

/// `Σ M(x)·|d̂(x) − z(x)|` normalised per [`SparseNorm`].
pub fn sparse_depth_loss(g: &mut Graph, pred: Var, sparse: &Array, mask: &Array, norm: SparseNorm) -> Result<Var> {
    check_sparse_mask(sparse, mask)?;
    if g.shape(pred) != sparse.shape() {
        return Err(contract!("prediction {:?} vs sparse {:?}", g.shape(pred), sparse.shape()));
    }
    let denom = match norm {
        SparseNorm::Pixels => sparse.len(),
        SparseNorm::ValidPoints => mask.data().iter().filter(|&&m| m == 1.0).count(),
    };
    if denom == 0 {
        log::warn!("sparse depth loss: no valid sparse point");
        return g.scalar(0.0);
    }
    let z = g.constant(sparse.clone())?;
    let m = g.constant(mask.clone())?;
    let d = g.sub(pred, z)?;
    let a = g.abs(d)?;
    let am = g.mul(a, m)?;
    let s = g.sum(am)?;
    g.mul_scalar(s, 1.0 / denom as f64)
}

/// Edge-aware weights `exp(−|∂I|)` for the horizontal (`[1, H, W−1]`) and
/// vertical (`[1, H−1, W]`) forward differences, with `|∂I|` averaged over
/// channels.
pub fn edge_weights(guide: &Array) -> Result<(Option<Array>, Option<Array>)> {
    let (c, h, w) = guide.chw()?;
    let grad = |dy: usize, dx: usize| -> Result<Option<Array>> {
        if h <= dy || w <= dx {
            return Ok(None);
        }
        let (ho, wo) = (h - dy, w - dx);
        let mut out = Vec::with_capacity(ho * wo);
        for y in 0..ho {
            for x in 0..wo {
                let mean = (0..c).map(|ci| (guide.at3(ci, y + dy, x + dx) - guide.at3(ci, y, x)).abs()).sum::<f64>() / c as f64;
                out.push(libm::exp(-mean));
            }
        }
        Array::new(&[1, ho, wo], out).map(Some)
    };
    Ok((grad(0, 1)?, grad(1, 0)?))
}

/// `(1/|Ω|) Σ λ_X|∂_X d̂| + λ_Y|∂_Y d̂|` with forward differences.
pub fn smoothness_loss(g: &mut Graph, pred: Var, guide: &Array) -> Result<Var> {
    let (_, h, w) = guide.chw()?;
    if g.shape(pred) != [1, h, w] {
        return Err(contract!("prediction {:?} vs guide {}x{}", g.shape(pred), h, w));
    }
    let (lx, ly) = edge_weights(guide)?;
    let mut parts = Vec::with_capacity(2);
    for (lambda, kshape) in [(lx, [1, 1, 1, 2]), (ly, [1, 1, 2, 1])] {
        let Some(lambda) = lambda else { continue };
        let k = g.constant(Array::new(&kshape, alloc::vec![-1.0, 1.0])?)?;
        let d = g.conv2d(pred, k, None, Conv2d::new(1, 0))?;
        let a = g.abs(d)?;
        let l = g.constant(lambda)?;
        let weighted = g.mul(a, l)?;
        parts.push(g.sum(weighted)?);
    }
    let total = match parts[..] {
        [] => return g.scalar(0.0),
        [p] => p,
        [p, q] => g.add(p, q)?,
        _ => unreachable!(),
    };
    g.mul_scalar(total, 1.0 / (h * w) as f64)
}

/// Graph handles for every term of the objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub photometric: Var,
    pub sparse: Var,
    pub smoothness: Var,
}

/// Full objective for one sample given the predicted `[1, H, W]` depth.
pub fn total_loss(g: &mut Graph, sample: &Sample, pred: Var, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.weights.validate()?;
    let target = g.constant(sample.image.clone())?;
    let mut recons = Vec::with_capacity(2);
    for (img, pose) in [(&sample.prev_image, &sample.pose_prev), (&sample.next_image, &sample.pose_next)] {
        let src = g.constant(img.clone())?;
        let (rec, mut valid) = reconstruct_image(g, src, pred, pose, &sample.intrinsics)?;
        if cfg.no_view_mask {
            valid = Array::full(valid.shape(), 1.0);
        }
        recons.push((rec, valid));
    }
    let photometric = photometric_loss(g, target, &recons, cfg)?;
    let sparse = sparse_depth_loss(g, pred, &sample.sparse, &sample.mask, cfg.sparse_norm)?;
    let smoothness = smoothness_loss(g, pred, &sample.image)?;
    let w = cfg.weights;
    let a = g.mul_scalar(photometric, w.w_ph)?;
    let b = g.mul_scalar(sparse, w.w_sz)?;
    let c = g.mul_scalar(smoothness, w.w_sm)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossTerms {
        total,
        photometric,
        sparse,
        smoothness,
    })
}
