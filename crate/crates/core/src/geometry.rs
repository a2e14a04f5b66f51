//! Pinhole camera model, rigid motions, and differentiable image
//! reconstruction from a neighbouring frame.
//!
//! Pixel coordinates `(u, v)` are measured at pixel centres with the origin at
//! the centre of the top-left pixel; `u` grows to the right, `v` downwards.
//! Images are `[3, H, W]` arrays and depth maps `[1, H, W]` arrays in metres.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{Array, Graph, Var};
use crate::error::{contract, Error, Result};

/// Points closer than this to the camera plane do not project.
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn identity() -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite() && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(contract!("intrinsics need finite fx, fy > 0, got {:?}", self));
        }
        Ok(())
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    /// Viewing ray `K⁻¹ [u, v, 1]ᵀ` (unit z component).
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }
}

/// Rigid motion `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

fn mat_vec(a: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

fn det(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let p = Self { rotation, translation };
        p.validate()?;
        Ok(p)
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation from an axis-angle vector (Rodrigues), then translation.
    pub fn from_axis_angle(w: [f64; 3], t: [f64; 3]) -> Self {
        let theta = libm::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
        let k = [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]];
        let k2 = mat_mul(&k, &k);
        let (a, b) = if theta < 1e-12 {
            (1.0, 0.5)
        } else {
            (libm::sin(theta) / theta, (1.0 - libm::cos(theta)) / (theta * theta))
        };
        let mut r = Self::identity().rotation;
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] += a * k[i][j] + b * k2[i][j];
            }
        }
        Self {
            rotation: r,
            translation: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = mat_mul(&transpose(&self.rotation), &self.rotation);
        let ortho = (0..3).all(|i| (0..3).all(|j| (rtr[i][j] - if i == j { 1.0 } else { 0.0 }).abs() <= ORTHO_TOL));
        if !ortho || (det(&self.rotation) - 1.0).abs() > ORTHO_TOL || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(contract!("pose rotation is not a proper rotation"));
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let r = mat_vec(&self.rotation, &p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    #[inline]
    pub fn rotate(&self, p: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.rotation, &p)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: mat_mul(&self.rotation, &other.rotation),
            translation: self.transform(other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, &self.translation);
        Pose {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }
}

/// `K⁻¹ [u, v, 1]ᵀ · depth`.
pub fn backproject(pixel: (f64, f64), depth: f64, k: &Intrinsics) -> Result<[f64; 3]> {
    if !(depth > 0.0) {
        return Err(contract!("backprojection depth must be positive, got {}", depth));
    }
    let r = k.ray(pixel.0, pixel.1);
    Ok([r[0] * depth, r[1] * depth, depth])
}

/// Perspective projection; `None` when the point is behind (or on) the camera
/// plane.
pub fn project(point: [f64; 3], k: &Intrinsics) -> Option<(f64, f64)> {
    let [x, y, z] = point;
    (z > MIN_PROJECT_DEPTH).then(|| (k.fx * x / z + k.cx, k.fy * y / z + k.cy))
}

/// Reconstructs the target view by warping `source` through the target depth
/// and the target→source motion `pose`:
/// `Î(x) = source(π(pose · K⁻¹ x̄ d(x)))`.
///
/// `source` is `[C, H, W]`, `depth` is `[1, H, W]` and strictly positive.
/// Returns the `[C, H, W]` reconstruction (differentiable w.r.t. `depth` and
/// `source`) and a `[1, H, W]` validity mask that is 0 where the warped
/// location is behind the camera or outside the source raster.
pub fn reconstruct_image(g: &mut Graph, source: Var, depth: Var, pose: &Pose, k: &Intrinsics) -> Result<(Var, Array)> {
    let (_, h, w) = g.value(source).chw()?;
    if g.shape(depth) != [1, h, w] {
        return Err(contract!("depth shape {:?} does not match image {}x{}", g.shape(depth), h, w));
    }
    if g.value(depth).data().iter().any(|&d| !(d > 0.0)) {
        return Err(contract!("reconstruction needs strictly positive depth"));
    }
    let n = h * w;
    // rotated viewing rays a = R K⁻¹ x̄, one constant plane per component
    let mut planes: [Vec<f64>; 3] = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for y in 0..h {
        for x in 0..w {
            let a = pose.rotate(k.ray(x as f64, y as f64));
            for c in 0..3 {
                planes[c].push(a[c]);
            }
        }
    }
    let shape = [1, h, w];
    let mut coord = |g: &mut Graph, c: usize| -> Result<Var> {
        let a = g.constant(Array::new(&shape, core::mem::take(&mut planes[c]))?)?;
        let p = g.mul(depth, a)?;
        g.add_scalar(p, pose.translation[c])
    };
    let px = coord(g, 0)?;
    let py = coord(g, 1)?;
    let pz = coord(g, 2)?;
    // points behind the camera get a dummy unit depth so the division stays
    // finite; they are masked out of the sampling anyway
    let front = g.value(pz).map(|z| if z > MIN_PROJECT_DEPTH { 1.0 } else { 0.0 });
    let back = front.map(|f| 1.0 - f);
    let fm = g.constant(front.clone())?;
    let bm = g.constant(back)?;
    let zf = g.mul(pz, fm)?;
    let zs = g.add(zf, bm)?;
    let xn = g.div(px, zs)?;
    let yn = g.div(py, zs)?;
    let us = g.mul_scalar(xn, k.fx)?;
    let u = g.add_scalar(us, k.cx)?;
    let vs = g.mul_scalar(yn, k.fy)?;
    let v = g.add_scalar(vs, k.cy)?;
    g.bilinear(source, u, v, Some(&front))
}

/// Array-in, array-out form of [`reconstruct_image`].
pub fn reconstruct_image_values(source: &Array, depth: &Array, pose: &Pose, k: &Intrinsics) -> Result<(Array, Array)> {
    let mut g = Graph::new();
    let s = g.constant(source.clone())?;
    let d = g.constant(depth.clone()).map_err(|e| match e {
        Error::NumericFailure { .. } => Error::NumericFailure { op: "reconstruct_image" },
        other => other,
    })?;
    let (out, valid) = reconstruct_image(&mut g, s, d, pose, k)?;
    Ok((g.value(out).clone(), valid))
}
