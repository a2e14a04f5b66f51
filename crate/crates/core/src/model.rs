//! Compact encoder-decoder depth-completion network.
//!
//! Input is the 5-channel stack `[RGB, sparse / d_max, mask]`. Each encoder
//! stage is a stride-2 3×3 convolution; each decoder stage upsamples by two,
//! concatenates the matching encoder feature (or the input for the last
//! stage) and applies a 3×3 convolution. All hidden convolutions use a leaky
//! activation with slope 0.2. A 3×3 head and a sigmoid map into
//! `(d_min, d_max)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::diff::{Array, Conv2d, Graph, ParamVector, Segment, Var};
use crate::error::{contract, Result};
use crate::rng::{self, stream};

pub const INPUT_CHANNELS: usize = 5;
const LEAK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthNetConfig {
    /// Encoder widths, one per stride-2 stage.
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    /// Width of the last decoder stage feeding the head.
    #[serde(default = "default_head_width")]
    pub head_width: usize,
    pub depth_min: f64,
    pub depth_max: f64,
}

fn default_widths() -> Vec<usize> {
    alloc::vec![16, 32, 64]
}

fn default_head_width() -> usize {
    8
}

impl DepthNetConfig {
    pub fn new(depth_min: f64, depth_max: f64) -> Self {
        Self {
            widths: default_widths(),
            head_width: default_head_width(),
            depth_min,
            depth_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.head_width == 0 {
            return Err(contract!("network needs >= 1 stage and positive widths"));
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min && self.depth_max.is_finite()) {
            return Err(contract!("network depth bounds need 0 < d_min < d_max"));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// `(name, shape)` of every parameter segment, in binding order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, cout: usize, cin: usize| {
            out.push((format!("{name}.weight"), alloc::vec![cout, cin, 3, 3]));
            out.push((format!("{name}.bias"), alloc::vec![cout]));
        };
        let mut cin = INPUT_CHANNELS;
        for (i, &w) in self.widths.iter().enumerate() {
            conv(format!("enc{}", i + 1), w, cin);
            cin = w;
        }
        // Decoder stage i (deepest first) outputs the width of encoder stage
        // i-1, or `head_width` for the stage that reaches full resolution.
        for i in (0..self.stages()).rev() {
            let (skip, cout) = if i == 0 {
                (INPUT_CHANNELS, self.head_width)
            } else {
                (self.widths[i - 1], self.widths[i - 1])
            };
            conv(format!("dec{}", i + 1), cout, cin + skip);
            cin = cout;
        }
        conv(String::from("head"), 1, cin);
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Fan-in scaled uniform weights `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        self.validate()?;
        let mut rng = rng::rng_for(seed, &[stream::INIT]);
        let segments = self
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let value = if shape.len() == 4 {
                    let bound = 1.0 / libm::sqrt((shape[1] * shape[2] * shape[3]) as f64);
                    Array::from_fn(&shape, |_| rng.gen_range(-bound..bound))
                } else {
                    Array::zeros(&shape)
                };
                Segment { name, value }
            })
            .collect();
        ParamVector::new(segments)
    }

    /// Checks that `params` has exactly this network's layout.
    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        let layout = self.layout();
        let segs = params.segments();
        if segs.len() != layout.len() || segs.iter().zip(&layout).any(|(s, (n, shape))| s.name != *n || s.value.shape() != shape.as_slice()) {
            return Err(contract!("parameters do not match the network layout"));
        }
        Ok(())
    }

    fn input(&self, image: &Array, sparse: &Array, mask: &Array) -> Result<Array> {
        let (c, h, w) = image.chw()?;
        if c != 3 || sparse.shape() != [1, h, w] || mask.shape() != [1, h, w] {
            return Err(contract!("network input needs a [3, H, W] image and [1, H, W] depth maps"));
        }
        let f = 1usize << self.stages();
        if h % f != 0 || w % f != 0 {
            return Err(contract!("image size {}x{} must be divisible by {}", h, w, f));
        }
        let mut data = Vec::with_capacity(INPUT_CHANNELS * h * w);
        data.extend_from_slice(image.data());
        data.extend(sparse.data().iter().map(|z| z / self.depth_max));
        data.extend_from_slice(mask.data());
        Array::new(&[INPUT_CHANNELS, h, w], data)
    }

    /// Builds the network on `g` with the given parameter leaves (bound in
    /// [`layout`](Self::layout) order).
    pub fn forward(&self, g: &mut Graph, leaves: &[Var], image: &Array, sparse: &Array, mask: &Array) -> Result<NetOutputs> {
        let layout = self.layout();
        if leaves.len() != layout.len() || leaves.iter().zip(&layout).any(|(v, (_, s))| g.shape(*v) != s.as_slice()) {
            return Err(contract!("parameter leaves do not match the network layout"));
        }
        let x = g.constant(self.input(image, sparse, mask)?)?;
        let mut p = leaves.chunks(2);
        let mut conv = |g: &mut Graph, x: Var, stride: usize| -> Result<Var> {
            let wb = p.next().expect("layout checked");
            g.conv2d(x, wb[0], Some(wb[1]), Conv2d::new(stride, 1))
        };
        let mut skips = alloc::vec![x];
        let mut h = x;
        for _ in 0..self.stages() {
            let c = conv(g, h, 2)?;
            h = leaky(g, c)?;
            skips.push(h);
        }
        let bottleneck = h;
        skips.pop();
        while let Some(skip) = skips.pop() {
            let up = g.upsample(h, 2)?;
            let cat = g.concat(&[up, skip])?;
            let c = conv(g, cat, 1)?;
            h = leaky(g, c)?;
        }
        let logits = conv(g, h, 1)?;
        let s = g.sigmoid(logits)?;
        let scaled = g.mul_scalar(s, self.depth_max - self.depth_min)?;
        let depth = g.add_scalar(scaled, self.depth_min)?;
        Ok(NetOutputs { depth, bottleneck })
    }
}

/// `max(x, 0.2x)` written as `0.6x + 0.4|x|`.
fn leaky(g: &mut Graph, x: Var) -> Result<Var> {
    let a = g.abs(x)?;
    let a = g.mul_scalar(a, 0.5 * (1.0 - LEAK))?;
    let l = g.mul_scalar(x, 0.5 * (1.0 + LEAK))?;
    g.add(l, a)
}

#[derive(Debug, Clone, Copy)]
pub struct NetOutputs {
    /// `[1, H, W]` depth in metres.
    pub depth: Var,
    /// Deepest encoder activation.
    pub bottleneck: Var,
}

/// Adds every segment of `params` to `g` as a leaf.
pub fn bind_params(g: &mut Graph, params: &ParamVector, trainable: bool) -> Result<Vec<Var>> {
    params
        .segments()
        .iter()
        .map(|s| if trainable { g.param(s.value.clone()) } else { g.constant(s.value.clone()) })
        .collect()
}

/// Dense depth prediction for a sample, without gradients.
pub fn depth_net_forward(cfg: &DepthNetConfig, params: &ParamVector, sample: &Sample) -> Result<Array> {
    cfg.check_params(params)?;
    let mut g = Graph::new();
    let leaves = bind_params(&mut g, params, false)?;
    let out = cfg.forward(&mut g, &leaves, &sample.image, &sample.sparse, &sample.mask)?;
    Ok(g.value(out.depth).clone())
}

/// Channel-wise global average of the bottleneck activations.
pub fn encode_representation(cfg: &DepthNetConfig, params: &ParamVector, sample: &Sample) -> Result<Vec<f64>> {
    cfg.check_params(params)?;
    let mut g = Graph::new();
    let leaves = bind_params(&mut g, params, false)?;
    let out = cfg.forward(&mut g, &leaves, &sample.image, &sample.sparse, &sample.mask)?;
    let b = g.value(out.bottleneck);
    let (c, h, w) = b.chw()?;
    Ok(b.data().chunks(h * w).take(c).map(|ch| ch.iter().sum::<f64>() / (h * w) as f64).collect())
}

/// Cosine similarity; errors when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(contract!("cosine similarity of vectors of length {} and {}", a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return Err(contract!("cosine similarity of a zero vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests;
