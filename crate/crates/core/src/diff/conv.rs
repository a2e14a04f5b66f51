use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};

/// How a convolution reads outside the input raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Clamp to the nearest edge pixel.
    Replicate,
}

/// Convolution hyperparameters. Kernel extents come from the weight shape
/// `[C_out, C_in / groups, kh, kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
    pub groups: usize,
}

impl Conv2d {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            pad_mode: PadMode::Zero,
            groups: 1,
        }
    }

    pub const fn replicate(mut self) -> Self {
        self.pad_mode = PadMode::Replicate;
        self
    }

    pub const fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub cfg: Conv2d,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], cfg: Conv2d) -> Result<Self> {
        let (c_in, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => return Err(contract!("conv input must be [C, H, W], got {:?}", input)),
        };
        let (c_out, cg, kh, kw) = match *weight {
            [o, c, kh, kw] => (o, c, kh, kw),
            _ => return Err(contract!("conv weight must be rank 4, got {:?}", weight)),
        };
        if cfg.stride == 0 || cfg.groups == 0 {
            return Err(contract!("conv stride and groups must be positive"));
        }
        if c_in % cfg.groups != 0 || c_out % cfg.groups != 0 || c_in / cfg.groups != cg {
            return Err(contract!(
                "conv channel mismatch: input {} channels, weight {:?}, groups {}",
                c_in,
                weight,
                cfg.groups
            ));
        }
        if h + 2 * cfg.padding < kh || w + 2 * cfg.padding < kw {
            return Err(contract!("conv kernel {}x{} larger than padded input {}x{}", kh, kw, h, w));
        }
        let h_out = (h + 2 * cfg.padding - kh) / cfg.stride + 1;
        let w_out = (w + 2 * cfg.padding - kw) / cfg.stride + 1;
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            h_out,
            w_out,
            cfg,
        })
    }

    #[inline]
    pub fn cin_g(&self) -> usize {
        self.c_in / self.cfg.groups
    }

    #[inline]
    pub fn cout_g(&self) -> usize {
        self.c_out / self.cfg.groups
    }

    /// Rows of the unfolded matrix for one group.
    #[inline]
    pub fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.h_out * self.w_out
    }

    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let i = (o * self.cfg.stride + k) as isize - self.cfg.padding as isize;
        if i >= 0 && (i as usize) < extent {
            Some(i as usize)
        } else {
            match self.cfg.pad_mode {
                PadMode::Zero => None,
                PadMode::Replicate => Some(i.clamp(0, extent as isize - 1) as usize),
            }
        }
    }

    /// Source offsets (within one channel plane) for every `(ky, kx, oy, ox)`;
    /// [`NO_TAP`] marks zero padding.
    pub fn taps(&self) -> Vec<u32> {
        let mut taps = Vec::with_capacity(self.kh * self.kw * self.p());
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                for oy in 0..self.h_out {
                    let sy = self.source(oy, ky, self.h);
                    for ox in 0..self.w_out {
                        let sx = self.source(ox, kx, self.w);
                        taps.push(match (sy, sx) {
                            (Some(y), Some(x)) => (y * self.w + x) as u32,
                            _ => NO_TAP,
                        });
                    }
                }
            }
        }
        taps
    }

    /// One input and one output channel per group.
    pub fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    /// Valid output range `[lo, hi)` along one axis for kernel offset `k`,
    /// i.e. outputs whose source index `o·stride + k − pad` is in bounds.
    fn valid_range(&self, k: usize, out: usize, extent: usize) -> (usize, usize) {
        let (s, pad) = (self.cfg.stride, self.cfg.padding);
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(s) };
        let hi = if extent + pad > k { ((extent + pad - k - 1) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfolds one group of the input into a `[K, P]` matrix.
    pub fn im2col(&self, input: &[f64], group: usize, taps: &[u32]) -> Vec<f64> {
        let plane = self.h * self.w;
        let (p, s) = (self.p(), self.cfg.stride);
        if self.cfg.pad_mode == PadMode::Replicate {
            let span = self.kh * self.kw * p;
            let mut col = vec![0.0; self.k() * p];
            for ci in 0..self.cin_g() {
                let src = &input[(group * self.cin_g() + ci) * plane..][..plane];
                for (d, &t) in col[ci * span..][..span].iter_mut().zip(taps) {
                    *d = src[t as usize];
                }
            }
            return col;
        }
        let mut col = Vec::with_capacity(self.k() * p);
        let pad = self.cfg.padding;
        for ci in 0..self.cin_g() {
            let src = &input[(group * self.cin_g() + ci) * plane..][..plane];
            for ky in 0..self.kh {
                let (ylo, yhi) = self.valid_range(ky, self.h_out, self.h);
                for kx in 0..self.kw {
                    let (xlo, xhi) = self.valid_range(kx, self.w_out, self.w);
                    col.resize(col.len() + ylo * self.w_out, 0.0);
                    for oy in ylo..yhi {
                        let row = &src[(oy * s + ky - pad) * self.w..][..self.w];
                        col.resize(col.len() + xlo, 0.0);
                        if s == 1 {
                            let x0 = xlo + kx - pad;
                            col.extend_from_slice(&row[x0..x0 + (xhi - xlo)]);
                        } else {
                            col.extend((xlo..xhi).map(|ox| row[ox * s + kx - pad]));
                        }
                        col.resize(col.len() + self.w_out - xhi, 0.0);
                    }
                    col.resize(col.len() + (self.h_out - yhi) * self.w_out, 0.0);
                }
            }
        }
        col
    }

    /// Scatter-adds a `[K, P]` column gradient back onto the input gradient.
    pub fn col2im_add(&self, col: &[f64], group: usize, taps: &[u32], grad_in: &mut [f64]) {
        let plane = self.h * self.w;
        let (p, s) = (self.p(), self.cfg.stride);
        let span = self.kh * self.kw * p;
        if self.cfg.pad_mode == PadMode::Replicate {
            for ci in 0..self.cin_g() {
                let dst = &mut grad_in[(group * self.cin_g() + ci) * plane..][..plane];
                for (v, &t) in col[ci * span..][..span].iter().zip(taps) {
                    dst[t as usize] += *v;
                }
            }
            return;
        }
        let pad = self.cfg.padding;
        for ci in 0..self.cin_g() {
            let dst = &mut grad_in[(group * self.cin_g() + ci) * plane..][..plane];
            for ky in 0..self.kh {
                let (ylo, yhi) = self.valid_range(ky, self.h_out, self.h);
                for kx in 0..self.kw {
                    let (xlo, xhi) = self.valid_range(kx, self.w_out, self.w);
                    let block = &col[(ci * self.kh * self.kw + ky * self.kw + kx) * p..][..p];
                    for oy in ylo..yhi {
                        let row = &mut dst[(oy * s + ky - pad) * self.w..][..self.w];
                        let src = &block[oy * self.w_out..][..self.w_out];
                        for ox in xlo..xhi {
                            row[ox * s + kx - pad] += src[ox];
                        }
                    }
                }
            }
        }
    }

    /// Direct depthwise convolution: `out[c, p] = Σ_k w[c, k]·x[c, tap(k, p)]`.
    pub fn depthwise_forward(&self, input: &[f64], weight: &[f64], taps: &[u32], out: &mut [f64]) {
        let (plane, p, kk) = (self.h * self.w, self.p(), self.kh * self.kw);
        for c in 0..self.c_in {
            let x = &input[c * plane..][..plane];
            let o = &mut out[c * p..][..p];
            for k in 0..kk {
                let wk = weight[c * kk + k];
                for (ov, &t) in o.iter_mut().zip(&taps[k * p..][..p]) {
                    if t != NO_TAP {
                        *ov += wk * x[t as usize];
                    }
                }
            }
        }
    }

    /// Weight and input gradients of [`depthwise_forward`](Self::depthwise_forward).
    #[allow(clippy::too_many_arguments)]
    pub fn depthwise_backward(
        &self,
        input: &[f64],
        weight: &[f64],
        taps: &[u32],
        grad_out: &[f64],
        grad_w: Option<&mut [f64]>,
        grad_in: Option<&mut [f64]>,
    ) {
        let (plane, p, kk) = (self.h * self.w, self.p(), self.kh * self.kw);
        if let Some(gw) = grad_w {
            for c in 0..self.c_in {
                let x = &input[c * plane..][..plane];
                let g = &grad_out[c * p..][..p];
                for k in 0..kk {
                    gw[c * kk + k] = g
                        .iter()
                        .zip(&taps[k * p..][..p])
                        .filter(|(_, &t)| t != NO_TAP)
                        .map(|(gv, &t)| gv * x[t as usize])
                        .sum();
                }
            }
        }
        if let Some(gi) = grad_in {
            for c in 0..self.c_in {
                let dst = &mut gi[c * plane..][..plane];
                let g = &grad_out[c * p..][..p];
                for k in 0..kk {
                    let wk = weight[c * kk + k];
                    for (gv, &t) in g.iter().zip(&taps[k * p..][..p]) {
                        if t != NO_TAP {
                            dst[t as usize] += wk * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Padding marker in a tap table.
pub(crate) const NO_TAP: u32 = u32::MAX;

/// Row-major `C = alpha * op(A) * op(B) + beta * C` where `op(A)` is `m x k`
/// and `op(B)` is `k x n`. A transposed operand is stored in its untransposed
/// row-major layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices; `c` is exclusively borrowed and cannot alias `a`/`b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
