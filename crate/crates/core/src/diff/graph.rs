use alloc::vec;
use alloc::vec::Vec;

use super::array::Array;
use super::conv::{gemm, Conv2d, ConvGeom};
use crate::error::{contract, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }

    /// Partial derivatives `(d/da, d/db)`.
    #[inline]
    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinOp::Add => (1.0, 1.0),
            BinOp::Sub => (1.0, -1.0),
            BinOp::Mul => (b, a),
            BinOp::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnOp {
    Exp,
    Log,
    Sigmoid,
    Abs,
    Sqrt,
}

impl UnOp {
    fn name(self) -> &'static str {
        match self {
            UnOp::Exp => "exp",
            UnOp::Log => "log",
            UnOp::Sigmoid => "sigmoid",
            UnOp::Abs => "abs",
            UnOp::Sqrt => "sqrt",
        }
    }

    #[inline]
    fn eval(self, x: f64) -> f64 {
        match self {
            UnOp::Exp => libm::exp(x),
            UnOp::Log => {
                if x > 0.0 {
                    libm::log(x)
                } else {
                    f64::NAN
                }
            }
            UnOp::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + libm::exp(-x))
                } else {
                    let e = libm::exp(x);
                    e / (1.0 + e)
                }
            }
            UnOp::Abs => x.abs(),
            UnOp::Sqrt => {
                if x >= 0.0 {
                    libm::sqrt(x)
                } else {
                    f64::NAN
                }
            }
        }
    }

    /// Derivative given input `x` and output `y`. Kinks (|x| at 0, sqrt at 0)
    /// take derivative 0.
    #[inline]
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            UnOp::Exp => y,
            UnOp::Log => 1.0 / x,
            UnOp::Sigmoid => y * (1.0 - y),
            UnOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnOp::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
        }
    }
}

/// Bilinear tap for one output pixel: top-left integer corner and fractions.
#[derive(Debug, Clone, Copy)]
struct Tap {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinOp, Var, Var),
    Unary(UnOp, Var),
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        taps: Vec<u32>,
        /// Unfolded input per group, kept only when the weight is trainable.
        cols: Vec<Vec<f64>>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Bilinear {
        source: Var,
        u: Var,
        v: Var,
        taps: Vec<Option<Tap>>,
    },
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; `None` when `var` does not
    /// require gradients.
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Array> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn finite(value: Array, op: &'static str) -> Result<Array> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericFailure { op })
    }
}

fn accumulate(slot: &mut Option<Array>, shape: &[usize], contrib: &[f64]) {
    let g = slot.get_or_insert_with(|| Array::zeros(shape));
    let dst = g.data_mut();
    if dst.len() == contrib.len() {
        for (d, c) in dst.iter_mut().zip(contrib) {
            *d += c;
        }
    } else {
        // scalar operand broadcast over a larger one
        dst[0] += contrib.iter().sum::<f64>();
    }
}

/// As [`accumulate`], moving `contrib` into an empty slot.
fn accumulate_vec(slot: &mut Option<Array>, shape: &[usize], contrib: Vec<f64>) {
    if slot.is_none() && contrib.len() == shape.iter().product::<usize>() {
        *slot = Some(Array::new(shape, contrib).expect("shape checked"));
    } else {
        accumulate(slot, shape, &contrib);
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array) -> Result<Var> {
        let value = finite(value, "param")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Array) -> Result<Var> {
        let value = finite(value, "constant")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(Array::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Value at `root`. Nodes evaluate when created, so this only returns the
    /// memoized result.
    pub fn forward(&self, root: Var) -> Result<&Array> {
        self.nodes
            .get(root.0)
            .map(|n| &n.value)
            .ok_or_else(|| contract!("unknown node {}", root.0))
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| op.eval(x, y))
                .collect();
            Array::new(va.shape(), data)?
        } else if vb.len() == 1 {
            let y = vb.data()[0];
            va.map(|x| op.eval(x, y))
        } else if va.len() == 1 {
            let x = va.data()[0];
            vb.map(|y| op.eval(x, y))
        } else {
            return Err(contract!(
                "{}: shapes {:?} and {:?} do not broadcast",
                op.name(),
                va.shape(),
                vb.shape()
            ));
        };
        let value = finite(value, op.name())?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary(op, a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = self.scalar(c)?;
        self.mul(a, c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = self.scalar(c)?;
        self.add(a, c)
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let c = self.scalar(c)?;
        self.sub(c, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    fn unary(&mut self, op: UnOp, a: Var) -> Result<Var> {
        let value = finite(self.nodes[a.0].value.map(|x| op.eval(x)), op.name())?;
        let g = self.needs(a);
        Ok(self.push(value, Op::Unary(op, a), g))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Log, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Sigmoid, a)
    }

    /// Absolute value; the subgradient at exactly 0 is 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Abs, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnOp::Sqrt, a)
    }

    /// 2-D convolution of a `[C, H, W]` input with a `[C_out, C/groups, kh, kw]`
    /// weight and optional `[C_out]` bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, cfg: Conv2d) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), cfg)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(contract!("conv bias must be [{}], got {:?}", geom.c_out, self.shape(b)));
            }
        }
        let (k, p, cout_g) = (geom.k(), geom.p(), geom.cout_g());
        let taps = geom.taps();
        let keep_cols = self.needs(weight) && !geom.is_depthwise();
        let mut out = vec![0.0; geom.c_out * p];
        let mut cols = Vec::new();
        {
            let x = self.nodes[input.0].value.data();
            let w = self.nodes[weight.0].value.data();
            if geom.is_depthwise() {
                geom.depthwise_forward(x, w, &taps, &mut out);
            } else {
                for g in 0..cfg.groups {
                    let col = geom.im2col(x, g, &taps);
                    let wg = &w[g * cout_g * k..][..cout_g * k];
                    gemm(cout_g, k, p, wg, false, &col, false, 0.0, &mut out[g * cout_g * p..][..cout_g * p]);
                    if keep_cols {
                        cols.push(col);
                    }
                }
            }
            if let Some(b) = bias {
                let bv = self.nodes[b.0].value.data();
                for (o, row) in out.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[o]);
                }
            }
        }
        let value = finite(Array::new(&[geom.c_out, geom.h_out, geom.w_out], out)?, "conv2d")?;
        let g = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                taps,
                cols,
            },
            g,
        ))
    }

    /// Nearest-neighbour upsampling of a `[C, H, W]` array by an integer factor.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(contract!("upsample factor must be positive"));
        }
        let src = &self.nodes[input.0].value;
        let (c, h, w) = src.chw()?;
        let (ho, wo) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    out.push(src.at3(ci, y / factor, x / factor));
                }
            }
        }
        let value = Array::new(&[c, ho, wo], out)?;
        let g = self.needs(input);
        Ok(self.push(value, Op::Upsample { input, factor }, g))
    }

    /// Samples a `[C, Hs, Ws]` source at pixel coordinates `(u, v)` (both
    /// `[1, H, W]`), with pixel centres at integer coordinates.
    ///
    /// A pixel is valid when `(u, v)` lies inside `[0, Ws-1] x [0, Hs-1]` and
    /// `mask` (if given) is nonzero there. Invalid pixels read 0 and pass no
    /// gradient. Returns the `[C, H, W]` samples and the `[1, H, W]` validity.
    pub fn bilinear(&mut self, source: Var, u: Var, v: Var, mask: Option<&Array>) -> Result<(Var, Array)> {
        let (c, hs, ws) = self.value(source).chw()?;
        let shape = self.shape(u).to_vec();
        let (h, w) = match shape[..] {
            [1, h, w] => (h, w),
            _ => return Err(contract!("bilinear coordinates must be [1, H, W], got {:?}", shape)),
        };
        if self.shape(v) != shape.as_slice() || mask.is_some_and(|m| m.shape() != shape.as_slice()) {
            return Err(contract!("bilinear coordinate/mask shapes disagree"));
        }
        let n = h * w;
        let (uu, vv) = (self.value(u).data(), self.value(v).data());
        let umax = (ws - 1) as f64;
        let vmax = (hs - 1) as f64;
        let mut taps = Vec::with_capacity(n);
        let mut validity = vec![0.0; n];
        for i in 0..n {
            let (x, y) = (uu[i], vv[i]);
            let ok = mask.is_none_or(|m| m.data()[i] != 0.0)
                && (0.0..=umax).contains(&x)
                && (0.0..=vmax).contains(&y);
            if !ok {
                taps.push(None);
                continue;
            }
            validity[i] = 1.0;
            let x0 = if ws > 1 { (libm::floor(x) as usize).min(ws - 2) } else { 0 };
            let y0 = if hs > 1 { (libm::floor(y) as usize).min(hs - 2) } else { 0 };
            taps.push(Some(Tap {
                x0,
                y0,
                fx: x - x0 as f64,
                fy: y - y0 as f64,
            }));
        }
        let src = self.value(source);
        let mut out = vec![0.0; c * n];
        for ci in 0..c {
            for (i, tap) in taps.iter().enumerate() {
                if let Some(t) = tap {
                    out[ci * n + i] = sample_tap(src, ci, t, hs, ws);
                }
            }
        }
        let value = finite(Array::new(&[c, h, w], out)?, "bilinear")?;
        let g = self.needs(source) || self.needs(u) || self.needs(v);
        let var = self.push(value, Op::Bilinear { source, u, v, taps }, g);
        Ok((var, Array::new(&shape, validity)?))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = finite(Array::scalar(self.value(a).sum()), "sum")?;
        let g = self.needs(a);
        Ok(self.push(value, Op::Sum(a), g))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let value = finite(Array::scalar(v.sum() / v.len() as f64), "mean")?;
        let g = self.needs(a);
        Ok(self.push(value, Op::Mean(a), g))
    }

    /// Concatenates arrays along their leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract!("concat of zero arrays"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(contract!("concat trailing shapes differ: {:?} vs {:?}", s, tail));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Array::new(&shape, data)?;
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), g))
    }

    /// Reverse-mode sweep from a scalar `root`. Every node is visited once,
    /// in reverse creation order. Trainable leaves that `root` does not depend
    /// on get an all-zero gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.forward(root)?;
        if root_value.len() != 1 {
            return Err(contract!("backward needs a scalar root, got shape {:?}", root_value.shape()));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Array::full(root_value.shape(), 1.0));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Array::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let (sa, sb) = (va.len() == 1 && gd.len() > 1, vb.len() == 1 && gd.len() > 1);
                let n = gd.len();
                let mut ga = if self.needs(*a) { vec![0.0; n] } else { Vec::new() };
                let mut gb = if self.needs(*b) { vec![0.0; n] } else { Vec::new() };
                for k in 0..n {
                    let x = va[if sa { 0 } else { k }];
                    let y = vb[if sb { 0 } else { k }];
                    let (da, db) = op.partials(x, y);
                    if !ga.is_empty() {
                        ga[k] = gd[k] * da;
                    }
                    if !gb.is_empty() {
                        gb[k] = gd[k] * db;
                    }
                }
                if !ga.is_empty() {
                    accumulate_vec(&mut grads[a.0], self.shape(*a), ga);
                }
                if !gb.is_empty() {
                    accumulate_vec(&mut grads[b.0], self.shape(*b), gb);
                }
            }
            Op::Unary(op, a) => {
                if self.needs(*a) {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let contrib: Vec<f64> = (0..gd.len()).map(|k| gd[k] * op.deriv(x[k], y[k])).collect();
                    accumulate_vec(&mut grads[a.0], self.shape(*a), contrib);
                }
            }
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                taps,
                cols,
            } => {
                let (k, p, cout_g) = (geom.k(), geom.p(), geom.cout_g());
                if let Some(b) = bias.filter(|b| self.needs(*b)) {
                    let contrib: Vec<f64> = gd.chunks(p).map(|row| row.iter().sum()).collect();
                    accumulate_vec(&mut grads[b.0], self.shape(b), contrib);
                }
                let w = self.value(*weight).data();
                let (nw, ni) = (self.needs(*weight), self.needs(*input));
                if geom.is_depthwise() {
                    let mut gw = if nw { vec![0.0; w.len()] } else { Vec::new() };
                    let mut gin = if ni { vec![0.0; geom.c_in * geom.h * geom.w] } else { Vec::new() };
                    geom.depthwise_backward(
                        self.value(*input).data(),
                        w,
                        taps,
                        gd,
                        nw.then_some(gw.as_mut_slice()),
                        ni.then_some(gin.as_mut_slice()),
                    );
                    if nw {
                        accumulate_vec(&mut grads[weight.0], self.shape(*weight), gw);
                    }
                    if ni {
                        accumulate_vec(&mut grads[input.0], self.shape(*input), gin);
                    }
                    return Ok(());
                }
                if nw {
                    let mut gw = vec![0.0; geom.c_out * k];
                    for (grp, col) in cols.iter().enumerate() {
                        let gg = &gd[grp * cout_g * p..][..cout_g * p];
                        gemm(cout_g, p, k, gg, false, col, true, 0.0, &mut gw[grp * cout_g * k..][..cout_g * k]);
                    }
                    accumulate_vec(&mut grads[weight.0], self.shape(*weight), gw);
                }
                if ni {
                    let mut gin = vec![0.0; geom.c_in * geom.h * geom.w];
                    let mut dcol = vec![0.0; k * p];
                    for grp in 0..geom.cfg.groups {
                        let wg = &w[grp * cout_g * k..][..cout_g * k];
                        let gg = &gd[grp * cout_g * p..][..cout_g * p];
                        gemm(k, cout_g, p, wg, true, gg, false, 0.0, &mut dcol);
                        geom.col2im_add(&dcol, grp, taps, &mut gin);
                    }
                    accumulate_vec(&mut grads[input.0], self.shape(*input), gin);
                }
            }
            Op::Upsample { input, factor } => {
                if self.needs(*input) {
                    let (c, h, w) = self.value(*input).chw()?;
                    let (ho, wo) = (h * factor, w * factor);
                    let mut gin = vec![0.0; c * h * w];
                    for ci in 0..c {
                        for y in 0..ho {
                            for x in 0..wo {
                                gin[(ci * h + y / factor) * w + x / factor] += gd[(ci * ho + y) * wo + x];
                            }
                        }
                    }
                    accumulate_vec(&mut grads[input.0], self.shape(*input), gin);
                }
            }
            Op::Bilinear { source, u, v, taps } => {
                let src = self.value(*source);
                let (c, hs, ws) = src.chw()?;
                let n = taps.len();
                if self.needs(*source) {
                    let mut gs = vec![0.0; c * hs * ws];
                    for ci in 0..c {
                        for (i, tap) in taps.iter().enumerate() {
                            let Some(t) = tap else { continue };
                            let gi = gd[ci * n + i];
                            for (dy, dx, wt) in tap_weights(t, hs, ws) {
                                gs[(ci * hs + t.y0 + dy) * ws + t.x0 + dx] += gi * wt;
                            }
                        }
                    }
                    accumulate_vec(&mut grads[source.0], self.shape(*source), gs);
                }
                let (nu, nv) = (self.needs(*u), self.needs(*v));
                if nu || nv {
                    let mut gu = vec![0.0; n];
                    let mut gv = vec![0.0; n];
                    for (i, tap) in taps.iter().enumerate() {
                        let Some(t) = tap else { continue };
                        let x1 = (t.x0 + 1).min(ws - 1);
                        let y1 = (t.y0 + 1).min(hs - 1);
                        for ci in 0..c {
                            let p00 = src.at3(ci, t.y0, t.x0);
                            let p01 = src.at3(ci, t.y0, x1);
                            let p10 = src.at3(ci, y1, t.x0);
                            let p11 = src.at3(ci, y1, x1);
                            let gi = gd[ci * n + i];
                            if ws > 1 {
                                gu[i] += gi * ((1.0 - t.fy) * (p01 - p00) + t.fy * (p11 - p10));
                            }
                            if hs > 1 {
                                gv[i] += gi * ((1.0 - t.fx) * (p10 - p00) + t.fx * (p11 - p01));
                            }
                        }
                    }
                    if nu {
                        accumulate_vec(&mut grads[u.0], self.shape(*u), gu);
                    }
                    if nv {
                        accumulate_vec(&mut grads[v.0], self.shape(*v), gv);
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if self.needs(*a) {
                    let n = self.value(*a).len();
                    let scale = if matches!(node.op, Op::Mean(_)) { 1.0 / n as f64 } else { 1.0 };
                    let contrib = vec![gd[0] * scale; n];
                    accumulate_vec(&mut grads[a.0], self.shape(*a), contrib);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.needs(p) {
                        accumulate(&mut grads[p.0], self.shape(p), &gd[offset..offset + len]);
                    }
                    offset += len;
                }
            }
        }
        Ok(())
    }
}

/// The (up to) four neighbour offsets and weights of a tap. Degenerate axes of
/// extent 1 collapse onto a single neighbour.
fn tap_weights(t: &Tap, hs: usize, ws: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    let xs: &[(usize, f64)] = &if ws > 1 { [(0, 1.0 - t.fx), (1, t.fx)] } else { [(0, 1.0), (0, 0.0)] };
    let ys: &[(usize, f64)] = &if hs > 1 { [(0, 1.0 - t.fy), (1, t.fy)] } else { [(0, 1.0), (0, 0.0)] };
    let mut out = [(0, 0, 0.0); 4];
    let mut n = 0;
    for &(dy, wy) in ys {
        for &(dx, wx) in xs {
            if wy * wx != 0.0 {
                out[n] = (dy, dx, wy * wx);
                n += 1;
            }
        }
    }
    out.into_iter().take(n)
}

#[inline]
fn sample_tap(src: &Array, c: usize, t: &Tap, hs: usize, ws: usize) -> f64 {
    tap_weights(t, hs, ws).fold(0.0, |acc, (dy, dx, wt)| acc + wt * src.at3(c, t.y0 + dy, t.x0 + dx))
}
