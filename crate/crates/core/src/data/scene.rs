//! Ray-cast scene rendering.
//!
//! Colours depend only on world position and surface normal (textured
//! Lambertian surfaces under a fixed world light), so every frame of a
//! triplet sees the same radiance and the neighbour frames differ from the
//! centre frame only through geometry.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;

use super::{sparsify, DomainSpec, Sample, SceneStyle};
use crate::diff::Array;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::rng::{self, Rng};

const MAX_ATTEMPTS: usize = 64;
const HIT_EPS: f64 = 1e-9;
const WAVES: usize = 4;

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: V3) -> V3 {
    let n = libm::sqrt(dot(a, a));
    [a[0] / n, a[1] / n, a[2] / n]
}

fn add(a: V3, b: V3, s: f64) -> V3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn unit_vector(rng: &mut Rng) -> V3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n2 = dot(v, v);
        if n2 > 1e-4 && n2 <= 1.0 {
            return normalize(v);
        }
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    dir: V3,
    freq: f64,
    phase: f64,
    amp: f64,
}

#[derive(Debug, Clone)]
struct Material {
    albedo: V3,
    waves: [Wave; WAVES],
}

impl Material {
    fn random(spec: &DomainSpec, rng: &mut Rng) -> Self {
        let t = &spec.texture;
        let mut waves = [Wave {
            dir: [1.0, 0.0, 0.0],
            freq: 1.0,
            phase: 0.0,
            amp: 0.0,
        }; WAVES];
        let mut total = 0.0;
        let (lo, hi) = (libm::log(t.freq_min), libm::log(t.freq_max));
        for w in &mut waves {
            w.dir = unit_vector(rng);
            w.freq = libm::exp(if hi > lo { rng.gen_range(lo..=hi) } else { lo });
            w.phase = rng.gen_range(0.0..2.0 * PI);
            w.amp = rng.gen_range(0.2..1.0);
            total += w.amp;
        }
        for w in &mut waves {
            w.amp /= total;
        }
        let mut albedo = [0.0; 3];
        for (a, tint) in albedo.iter_mut().zip(spec.tint) {
            *a = tint * rng.gen_range(0.45..1.0);
        }
        Self { albedo, waves }
    }

    /// Texture pattern in `[-1, 1]`.
    fn pattern(&self, p: V3) -> f64 {
        self.waves
            .iter()
            .map(|w| w.amp * libm::sin(2.0 * PI * w.freq * dot(w.dir, p) + w.phase))
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ridge {
    dir: [f64; 2],
    freq: f64,
    phase: f64,
    amp: f64,
}

#[derive(Debug, Clone)]
enum Shape {
    /// Axis-aligned room seen from inside; faces are materials `0..6`.
    Room { min: V3, max: V3 },
    /// Solid axis-aligned box with a single material.
    Block { min: V3, max: V3 },
    /// Ground `y = base − Σ amp·|sin(…)|` (y points down).
    Terrain { base: f64, ridges: Vec<Ridge> },
    /// Plane `z = const` facing the camera.
    Backdrop { z: f64 },
}

#[derive(Debug, Clone)]
struct Object {
    shape: Shape,
    materials: Vec<Material>,
}

struct Hit {
    t: f64,
    normal: V3,
    material: usize,
}

fn ridge_height(ridges: &[Ridge], x: f64, z: f64) -> f64 {
    ridges
        .iter()
        .map(|r| r.amp * libm::fabs(libm::sin(r.freq * (r.dir[0] * x + r.dir[1] * z) + r.phase)))
        .sum()
}

fn ridge_gradient(ridges: &[Ridge], x: f64, z: f64) -> (f64, f64) {
    ridges.iter().fold((0.0, 0.0), |(gx, gz), r| {
        let s = r.freq * (r.dir[0] * x + r.dir[1] * z) + r.phase;
        let d = r.amp * libm::sin(s).signum() * libm::cos(s) * r.freq;
        (gx + d * r.dir[0], gz + d * r.dir[1])
    })
}

impl Object {
    fn intersect(&self, o: V3, d: V3, t_max: f64) -> Option<Hit> {
        match &self.shape {
            Shape::Room { min, max } => {
                let mut best: Option<Hit> = None;
                for a in 0..3 {
                    let (t, face, sign) = if d[a] > 0.0 {
                        ((max[a] - o[a]) / d[a], 2 * a + 1, -1.0)
                    } else if d[a] < 0.0 {
                        ((min[a] - o[a]) / d[a], 2 * a, 1.0)
                    } else {
                        continue;
                    };
                    if t > HIT_EPS && t < t_max && best.as_ref().is_none_or(|b| t < b.t) {
                        let mut normal = [0.0; 3];
                        normal[a] = sign;
                        best = Some(Hit { t, normal, material: face });
                    }
                }
                best
            }
            Shape::Block { min, max } => {
                let (mut near, mut far, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = {
                        let ta = (min[a] - o[a]) / d[a];
                        let tb = (max[a] - o[a]) / d[a];
                        if ta < tb {
                            (ta, tb)
                        } else {
                            (tb, ta)
                        }
                    };
                    if t0 > near {
                        near = t0;
                        axis = a;
                    }
                    far = far.min(t1);
                }
                if near > far || near <= HIT_EPS || near >= t_max {
                    return None;
                }
                let mut normal = [0.0; 3];
                normal[axis] = -d[axis].signum();
                Some(Hit { t: near, normal, material: 0 })
            }
            Shape::Backdrop { z } => {
                let t = (z - o[2]) / d[2];
                (d[2] > 0.0 && t > HIT_EPS && t < t_max).then_some(Hit {
                    t,
                    normal: [0.0, 0.0, -1.0],
                    material: 0,
                })
            }
            Shape::Terrain { base, ridges } => {
                let top = base - ridges.iter().map(|r| r.amp).sum::<f64>();
                let below = |t: f64| {
                    let p = add(o, d, t);
                    p[1] - (base - ridge_height(ridges, p[0], p[2]))
                };
                let mut t = HIT_EPS;
                if below(t) >= 0.0 {
                    return None;
                }
                while t < t_max {
                    let y = o[1] + d[1] * t;
                    if d[1] <= 0.0 && y < top {
                        return None;
                    }
                    let step = 0.02 + 0.01 * t;
                    let next_t = (t + step).min(t_max);
                    let cur = below(next_t);
                    if cur >= 0.0 {
                        let (mut lo, mut hi) = (t, next_t);
                        for _ in 0..40 {
                            let mid = 0.5 * (lo + hi);
                            if below(mid) >= 0.0 {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        let p = add(o, d, hi);
                        let (gx, gz) = ridge_gradient(ridges, p[0], p[2]);
                        // Surface y − base + h(x, z) = 0 with upward (−y) normal.
                        let normal = normalize([gx, -1.0, gz]);
                        return Some(Hit { t: hi, normal, material: 0 });
                    }
                    t = next_t;
                    if next_t >= t_max {
                        break;
                    }
                }
                None
            }
        }
    }

    /// Whether a camera centre is strictly in free space, `margin` away from
    /// any surface of this object.
    fn clears(&self, c: V3, margin: f64) -> bool {
        match &self.shape {
            Shape::Room { min, max } => (0..3).all(|a| c[a] > min[a] + margin && c[a] < max[a] - margin),
            Shape::Block { min, max } => (0..3).any(|a| c[a] < min[a] - margin || c[a] > max[a] + margin),
            Shape::Terrain { base, ridges } => c[1] < base - ridge_height(ridges, c[0], c[2]) - margin,
            Shape::Backdrop { z } => c[2] < z - margin,
        }
    }
}

struct Scene {
    objects: Vec<Object>,
    light: V3,
    ambient: f64,
    contrast: f64,
}

impl Scene {
    /// Returns the ray parameter of the closest hit and the shaded colour.
    fn trace(&self, o: V3, d: V3) -> Option<(f64, V3)> {
        let mut best: Option<(Hit, usize)> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            let t_max = best.as_ref().map_or(f64::INFINITY, |(h, _)| h.t);
            if let Some(h) = obj.intersect(o, d, t_max) {
                best = Some((h, i));
            }
        }
        let (hit, i) = best?;
        let p = add(o, d, hit.t);
        let mat = &self.objects[i].materials[hit.material];
        let shade = self.ambient + (1.0 - self.ambient) * dot(hit.normal, self.light).max(0.0);
        let level = 0.5 + self.contrast * mat.pattern(p);
        let c = mat.albedo;
        Some((hit.t, [c[0] * shade * level, c[1] * shade * level, c[2] * shade * level]))
    }

    fn clears(&self, c: V3, margin: f64) -> bool {
        self.objects.iter().all(|o| o.clears(c, margin))
    }
}

/// Renders one view. The ray parameter for `K⁻¹[u, v, 1]ᵀ` rotated into the
/// world equals the camera-frame z depth.
fn render_view(scene: &Scene, cam: &Pose, k: &Intrinsics, h: usize, w: usize, with_depth: bool) -> (Array, Option<Array>) {
    let mut img = Array::zeros(&[3, h, w]);
    let mut depth = with_depth.then(|| Array::zeros(&[1, h, w]));
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let dir = cam.rotate(k.ray(x as f64, y as f64));
            if let Some((t, col)) = scene.trace(cam.translation, dir) {
                let i = y * w + x;
                let data = img.data_mut();
                for c in 0..3 {
                    data[c * plane + i] = col[c];
                }
                if let Some(d) = depth.as_mut() {
                    d.data_mut()[i] = t;
                }
            }
        }
    }
    (img, depth)
}

fn rotation_ypr(yaw: f64, pitch: f64, roll: f64) -> Pose {
    let ry = Pose::from_axis_angle([0.0, yaw, 0.0], [0.0; 3]);
    let rx = Pose::from_axis_angle([pitch, 0.0, 0.0], [0.0; 3]);
    let rz = Pose::from_axis_angle([0.0, 0.0, roll], [0.0; 3]);
    ry.compose(&rx).compose(&rz)
}

/// World-from-camera pose for the centre frame.
fn camera(rng: &mut Rng, at: V3, yaw: f64, pitch: f64) -> Pose {
    let r = rotation_ypr(rng.gen_range(-yaw..=yaw), rng.gen_range(-pitch..=pitch), rng.gen_range(-0.03..=0.03));
    Pose {
        rotation: r.rotation,
        translation: at,
    }
}

fn room(spec: &DomainSpec, rng: &mut Rng) -> (Vec<Object>, Pose) {
    let s = spec.depth_max;
    let half_w = rng.gen_range(0.25..0.4) * s;
    let cam_h = rng.gen_range(0.2..0.3) * s;
    let ceil = rng.gen_range(0.2..0.3) * s;
    let far = rng.gen_range(0.55..0.8) * s;
    let back = 0.2 * s;
    let x0 = rng.gen_range(-0.3..0.3) * half_w;
    let min = [-half_w, -ceil, -back];
    let max = [half_w, cam_h, far];
    let mut objects = Vec::new();
    objects.push(Object {
        shape: Shape::Room { min, max },
        materials: (0..6).map(|_| Material::random(spec, rng)).collect(),
    });
    for _ in 0..rng.gen_range(2..=4) {
        let bw = rng.gen_range(0.06..0.16) * s;
        let bd = rng.gen_range(0.06..0.16) * s;
        let bh = rng.gen_range(0.08..0.3) * s;
        let cx = rng.gen_range(-half_w + bw..half_w - bw);
        let cz = rng.gen_range(0.35 * far..far - bd);
        objects.push(Object {
            shape: Shape::Block {
                min: [cx - bw, cam_h - bh, cz - bd],
                max: [cx + bw, cam_h, cz + bd],
            },
            materials: alloc::vec![Material::random(spec, rng)],
        });
    }
    (objects, camera(rng, [x0, 0.0, 0.0], 0.35, 0.12))
}

fn corridor(spec: &DomainSpec, rng: &mut Rng) -> (Vec<Object>, Pose) {
    let s = spec.depth_max;
    let half_w = rng.gen_range(0.12..0.2) * s;
    let cam_h = rng.gen_range(0.12..0.22) * s;
    let ceil = rng.gen_range(0.15..0.3) * s;
    let far = rng.gen_range(0.65..0.85) * s;
    let min = [-half_w, -ceil, -0.1 * s];
    let max = [half_w, cam_h, far];
    let mut objects = Vec::new();
    objects.push(Object {
        shape: Shape::Room { min, max },
        materials: (0..6).map(|_| Material::random(spec, rng)).collect(),
    });
    // Blocks lined along both side walls.
    for side in [-1.0, 1.0] {
        let mut z = rng.gen_range(0.1..0.25) * far;
        while z < far * 0.9 {
            let depth = rng.gen_range(0.05..0.15) * far;
            let width = rng.gen_range(0.15..0.45) * half_w;
            let height = rng.gen_range(0.2..0.9) * (cam_h + ceil);
            let (x_lo, x_hi) = if side < 0.0 {
                (-half_w, -half_w + width)
            } else {
                (half_w - width, half_w)
            };
            objects.push(Object {
                shape: Shape::Block {
                    min: [x_lo, cam_h - height, z],
                    max: [x_hi, cam_h, (z + depth).min(far)],
                },
                materials: alloc::vec![Material::random(spec, rng)],
            });
            z += depth + rng.gen_range(0.05..0.2) * far;
        }
    }
    let x0 = rng.gen_range(-0.25..0.25) * half_w;
    (objects, camera(rng, [x0, 0.0, 0.0], 0.15, 0.08))
}

fn terrain(spec: &DomainSpec, rng: &mut Rng) -> (Vec<Object>, Pose) {
    let s = spec.depth_max;
    let cam_h = rng.gen_range(0.02..0.04) * s;
    let ridges = (0..3)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..2.0 * PI);
            Ridge {
                dir: [libm::cos(a), libm::sin(a)],
                freq: rng.gen_range(4.0..12.0) / s,
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: rng.gen_range(0.005..0.03) * s,
            }
        })
        .collect();
    // Backdrop first so the terrain march is bounded by it.
    let backdrop = Object {
        shape: Shape::Backdrop {
            z: rng.gen_range(0.6..0.85) * s,
        },
        materials: alloc::vec![Material::random(spec, rng)],
    };
    let ground = Object {
        shape: Shape::Terrain { base: cam_h, ridges },
        materials: alloc::vec![Material::random(spec, rng)],
    };
    let objects = alloc::vec![backdrop, ground];
    (objects, camera(rng, [0.0, 0.0, 0.0], 0.2, 0.06))
}

/// Small camera motion: rotation and translation magnitudes jittered around
/// the domain's nominal per-frame values, translation biased forward.
fn step(spec: &DomainSpec, rng: &mut Rng) -> Pose {
    let m = &spec.motion;
    let w = unit_vector(rng);
    let angle = m.rotation * rng.gen_range(0.5..1.0);
    let dir = normalize([rng.gen_range(-0.5..0.5), rng.gen_range(-0.15..0.15), 1.0]);
    let len = m.translation * rng.gen_range(0.6..1.0);
    Pose::from_axis_angle([w[0] * angle, w[1] * angle, w[2] * angle], [dir[0] * len, dir[1] * len, dir[2] * len])
}

/// Renders one sample, resampling scenes until the centre frame's depth lies
/// inside the declared range and all cameras are in free space.
pub fn render_sample(spec: &DomainSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    let mut rng = rng::rng_for(seed, &[]);
    let k = spec.intrinsics();
    let (h, w) = (spec.height, spec.width);
    for _ in 0..MAX_ATTEMPTS {
        let (objects, cam) = match spec.style {
            SceneStyle::PlanarRooms => room(spec, &mut rng),
            SceneStyle::BoxesCorridor => corridor(spec, &mut rng),
            SceneStyle::RidgedTerrain => terrain(spec, &mut rng),
        };
        let scene = Scene {
            objects,
            light: normalize([rng.gen_range(-0.5..0.5), -1.0, rng.gen_range(-0.6..0.2)]),
            ambient: spec.ambient,
            contrast: spec.texture.contrast,
        };
        let fwd = step(spec, &mut rng);
        let back = step(spec, &mut rng).inverse();
        let cam_next = cam.compose(&fwd);
        let cam_prev = cam.compose(&back);
        let margin = 0.5 * spec.depth_min;
        if ![&cam, &cam_next, &cam_prev].iter().all(|c| scene.clears(c.translation, margin)) {
            continue;
        }
        let (image, depth) = render_view(&scene, &cam, &k, h, w, true);
        let depth = depth.expect("centre view renders depth");
        if !depth.data().iter().all(|d| *d >= spec.depth_min && *d <= spec.depth_max) {
            continue;
        }
        let (prev_image, _) = render_view(&scene, &cam_prev, &k, h, w, false);
        let (next_image, _) = render_view(&scene, &cam_next, &k, h, w, false);
        let [image, prev_image, next_image] = [image, prev_image, next_image].map(|mut im| {
            for v in im.data_mut() {
                let n = if spec.image_noise > 0.0 { spec.image_noise * gaussian(&mut rng) } else { 0.0 };
                *v = (*v + n).clamp(0.0, 1.0);
            }
            im
        });
        let (sparse, mask) = sparsify(&depth, spec.pattern, spec.density, rng.gen(), Some(&image))?;
        return Ok(Sample {
            image,
            prev_image,
            next_image,
            sparse,
            mask,
            intrinsics: k,
            pose_prev: cam_prev.inverse().compose(&cam),
            pose_next: cam_next.inverse().compose(&cam),
            ground_truth: Some(depth),
        });
    }
    Err(Error::Generation(format!(
        "domain `{}`: no admissible scene after {} attempts",
        spec.name, MAX_ATTEMPTS
    )))
}
