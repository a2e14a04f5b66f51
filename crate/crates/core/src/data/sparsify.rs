//! Sparse depth sampling patterns.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;

use super::SparsityPattern;
use crate::diff::Array;
use crate::error::{contract, Result};
use crate::rng::Rng;

/// Initial lattice stride for `n` points on an `h × w` raster: the largest
/// square stride whose lattice still holds at least `n` points.
pub fn grid_stride(h: usize, w: usize, n: usize) -> usize {
    let mut s = libm::floor(libm::sqrt((h * w) as f64 / n.max(1) as f64)) as usize;
    s = s.max(1);
    while s > 1 && h.div_ceil(s) * w.div_ceil(s) < n {
        s -= 1;
    }
    s
}

/// Samples exactly `⌊ρ·H·W⌋` points of `dense` (shape `[1, H, W]`, 0 =
/// invalid) without replacement. Returns `(sparse, mask)`.
///
/// `guide` is the `[C, H, W]` image used to rank corners; without it the
/// depth map itself is ranked.
pub fn sparsify(
    dense: &Array,
    pattern: SparsityPattern,
    density: f64,
    seed: u64,
    guide: Option<&Array>,
) -> Result<(Array, Array)> {
    let (c, h, w) = dense.chw()?;
    if c != 1 {
        return Err(contract!("sparsify expects a [1, H, W] depth map"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(contract!("density must be in (0, 1], got {}", density));
    }
    let n = libm::floor(density * (h * w) as f64 + 1e-9) as usize;
    if n == 0 {
        return Err(contract!("density {} selects no points on a {}x{} raster", density, h, w));
    }
    let valid: Vec<usize> = (0..h * w).filter(|&i| dense.data()[i] > 0.0 && dense.data()[i].is_finite()).collect();
    if valid.len() < n {
        return Err(contract!("only {} valid depths for {} requested points", valid.len(), n));
    }
    let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(seed);
    let chosen = match pattern {
        SparsityPattern::UniformRandom => index::sample(&mut rng, valid.len(), n).into_iter().map(|k| valid[k]).collect(),
        SparsityPattern::Grid => grid(dense, h, w, n, &mut rng),
        SparsityPattern::CornerFeatures => {
            let g = guide.unwrap_or(dense);
            if g.shape().len() != 3 || g.shape()[1] != h || g.shape()[2] != w {
                return Err(contract!("corner guide must be [C, {}, {}]", h, w));
            }
            corners(g, &valid, h, w, n, &mut rng)
        }
    };
    let mut sparse = Array::zeros(&[1, h, w]);
    let mut mask = Array::zeros(&[1, h, w]);
    for i in chosen {
        sparse.data_mut()[i] = dense.data()[i];
        mask.data_mut()[i] = 1.0;
    }
    Ok((sparse, mask))
}

/// Regular lattice with a random offset; when invalid pixels leave too few
/// lattice points the stride shrinks. Points are taken evenly spaced along
/// the lattice in raster order.
fn grid(dense: &Array, h: usize, w: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut s = grid_stride(h, w, n);
    loop {
        let (oy, ox) = (rng.gen_range(0..s), rng.gen_range(0..s));
        let lattice: Vec<usize> = (oy..h)
            .step_by(s)
            .flat_map(|y| (ox..w).step_by(s).map(move |x| y * w + x))
            .filter(|&i| dense.data()[i] > 0.0)
            .collect();
        if lattice.len() >= n {
            return (0..n).map(|k| lattice[k * lattice.len() / n]).collect();
        }
        // s = 1 covers every valid pixel, which the caller checked suffices.
        s -= 1;
    }
}

/// Shi-Tomasi corner score: smaller eigenvalue of the 3×3 structure tensor of
/// the channel-mean image.
fn corner_scores(img: &Array, h: usize, w: usize) -> Vec<f64> {
    let c = img.shape()[0];
    let gray: Vec<f64> = (0..h * w).map(|i| (0..c).map(|k| img.data()[k * h * w + i]).sum::<f64>() / c as f64).collect();
    let at = |y: isize, x: isize| gray[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut gxx = alloc::vec![0.0; h * w];
    let mut gyy = alloc::vec![0.0; h * w];
    let mut gxy = alloc::vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = 0.5 * (at(y, x + 1) - at(y, x - 1));
            let dy = 0.5 * (at(y + 1, x) - at(y - 1, x));
            let i = y as usize * w + x as usize;
            gxx[i] = dx * dx;
            gyy[i] = dy * dy;
            gxy[i] = dx * dy;
        }
    }
    let mut score = alloc::vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
            for yy in (y - 1).max(0)..=(y + 1).min(h as isize - 1) {
                for xx in (x - 1).max(0)..=(x + 1).min(w as isize - 1) {
                    let j = yy as usize * w + xx as usize;
                    a += gxx[j];
                    b += gxy[j];
                    d += gyy[j];
                }
            }
            let half_tr = 0.5 * (a + d);
            let disc = libm::sqrt(0.25 * (a - d) * (a - d) + b * b);
            score[y as usize * w + x as usize] = half_tr - disc;
        }
    }
    score
}

/// Greedy strongest-first selection keeping chosen points at least two
/// pixels apart; any shortfall is filled in score order without spacing.
fn corners(img: &Array, valid: &[usize], h: usize, w: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    let score = corner_scores(img, h, w);
    // Jitter breaks ties in flat regions randomly.
    let mut order: Vec<(f64, usize)> = valid.iter().map(|&i| (score[i] + 1e-12 * rng.gen::<f64>(), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut blocked = alloc::vec![false; h * w];
    let mut taken = alloc::vec![false; h * w];
    let mut chosen = Vec::with_capacity(n);
    for &(_, i) in &order {
        if chosen.len() == n {
            break;
        }
        if blocked[i] {
            continue;
        }
        chosen.push(i);
        taken[i] = true;
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for yy in (y - 1).max(0)..=(y + 1).min(h as isize - 1) {
            for xx in (x - 1).max(0)..=(x + 1).min(w as isize - 1) {
                blocked[yy as usize * w + xx as usize] = true;
            }
        }
    }
    for &(_, i) in &order {
        if chosen.len() == n {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            chosen.push(i);
        }
    }
    chosen
}
