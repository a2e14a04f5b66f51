use super::*;
use crate::error::Error;
use proptest::prelude::*;

/// Scalar warp written straight from the pinhole model: back-project each
/// target pixel with its depth, move it into the source frame, project, and
/// sample the source bilinearly. Returns the mean absolute colour residual
/// over pixels whose four bilinear taps are inside the source raster.
fn warp_residual(target: &Array, source: &Array, depth: &Array, pose: &Pose, k: &Intrinsics) -> f64 {
    let (_, h, w) = target.chw().unwrap();
    let plane = h * w;
    let (mut total, mut count) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let d = depth.data()[y * w + x];
            let p = [(x as f64 - k.cx) / k.fx * d, (y as f64 - k.cy) / k.fy * d, d];
            let r = &pose.rotation;
            let q: std::vec::Vec<f64> = (0..3).map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + pose.translation[i]).collect();
            if q[2] <= 1e-6 {
                continue;
            }
            let u = k.fx * q[0] / q[2] + k.cx;
            let v = k.fy * q[1] / q[2] + k.cy;
            let (u0, v0) = (u.floor(), v.floor());
            if u0 < 0.0 || v0 < 0.0 || u0 + 1.0 > (w - 1) as f64 || v0 + 1.0 > (h - 1) as f64 {
                continue;
            }
            let (fu, fv) = (u - u0, v - v0);
            let (iu, iv) = (u0 as usize, v0 as usize);
            for c in 0..3 {
                let s = |yy: usize, xx: usize| source.data()[c * plane + yy * w + xx];
                let val = (1.0 - fv) * ((1.0 - fu) * s(iv, iu) + fu * s(iv, iu + 1)) + fv * ((1.0 - fu) * s(iv + 1, iu) + fu * s(iv + 1, iu + 1));
                total += (val - target.data()[c * plane + y * w + x]).abs();
                count += 1;
            }
        }
    }
    assert!(count > 0, "no overlapping pixels");
    total / count as f64
}

fn small(name: &str) -> DomainSpec {
    preset(name).unwrap()
}

#[test]
fn every_preset_is_photometrically_self_consistent() {
    for name in preset_names() {
        let spec = small(name);
        for s in generate_domain(&spec, 4, 21).unwrap() {
            let gt = s.ground_truth.as_ref().unwrap();
            for (src, pose) in [(&s.next_image, &s.pose_next), (&s.prev_image, &s.pose_prev)] {
                let r = warp_residual(&s.image, src, gt, pose, &s.intrinsics);
                assert!(r < 0.02, "{name}: residual {r}");
            }
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = small("room-scan");
    let a = generate_domain(&spec, 3, 5).unwrap();
    let b = generate_domain(&spec, 3, 5).unwrap();
    assert_eq!(a, b);
    let c = generate_domain(&spec, 3, 6).unwrap();
    assert_ne!(a, c);
    let lazy = GeneratedDomain::new(spec, 3, 5).unwrap();
    assert_eq!(lazy.sample(2).unwrap(), a[2]);
    assert!(lazy.sample(3).is_err());
}

#[test]
fn equal_seeds_give_different_domains_different_scenes() {
    let a = generate_domain(&small("rgbd-dense"), 1, 9).unwrap();
    let b = generate_domain(&small("feature-track"), 1, 9).unwrap();
    assert_ne!(a[0].ground_truth, b[0].ground_truth);
}

#[test]
fn ground_truth_respects_declared_range() {
    for name in ["rgbd-dense", "lidar-scanline", "wide-range"] {
        let spec = small(name);
        for s in generate_domain(&spec, 4, 2).unwrap() {
            s.validate().unwrap();
            let gt = s.ground_truth.as_ref().unwrap();
            assert!(gt.data().iter().all(|d| *d >= spec.depth_min && *d <= spec.depth_max), "{name}");
            for i in 0..gt.len() {
                if s.mask.data()[i] == 1.0 {
                    assert_eq!(s.sparse.data()[i], gt.data()[i]);
                }
            }
            let expected = (spec.density * (spec.height * spec.width) as f64 + 1e-9).floor();
            assert_eq!(s.mask.sum(), expected);
        }
    }
}

#[test]
fn impossible_motion_is_a_generation_error() {
    let mut spec = small("rgbd-dense");
    spec.motion.translation = 50.0;
    assert!(matches!(generate_domain(&spec, 1, 0), Err(Error::Generation(_))));
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = small("rgbd-dense");
    spec.depth_min = 6.0;
    assert!(spec.validate().is_err());
    let spec = small("rgbd-dense").with_size(8, 64);
    assert!(spec.validate().is_err());
    let mut spec = small("rgbd-dense");
    spec.density = 0.0;
    assert!(GeneratedDomain::new(spec, 1, 0).is_err());
    assert!(GeneratedDomain::new(small("rgbd-dense"), 0, 0).is_err());
}

#[test]
fn presets_and_sequences_resolve() {
    for name in preset_names() {
        let s = preset(name).unwrap();
        s.validate().unwrap();
        assert_eq!((s.height, s.width), (48, 64));
    }
    assert_eq!(preset_names().iter().filter(|n| preset(n).unwrap().depth_max <= 5.0).count(), 3);
    for name in sequence_preset_names() {
        assert_eq!(sequence_preset(name).unwrap().len(), 3);
    }
    assert!(preset("nyu").is_err());
    assert!(sequence_preset("nope").is_err());
}

#[test]
fn intrinsics_centre_the_principal_point() {
    let s = small("feature-track");
    assert_eq!(s.intrinsics().cx, 31.5);
    assert_eq!(s.intrinsics().cy, 23.5);
}

fn ramp(h: usize, w: usize) -> Array {
    Array::from_fn(&[1, h, w], |i| 1.0 + i as f64)
}

#[test]
fn full_density_copies_dense() {
    let d = ramp(10, 12);
    for p in [SparsityPattern::UniformRandom, SparsityPattern::Grid, SparsityPattern::CornerFeatures] {
        let (z, m) = sparsify(&d, p, 1.0, 1, None).unwrap();
        assert_eq!(z, d);
        assert!(m.data().iter().all(|v| *v == 1.0));
    }
}

#[test]
fn five_percent_of_100x100_is_500_points() {
    let d = ramp(100, 100);
    for p in [SparsityPattern::UniformRandom, SparsityPattern::Grid, SparsityPattern::CornerFeatures] {
        let (_, m) = sparsify(&d, p, 0.05, 3, None).unwrap();
        assert_eq!(m.sum(), 500.0, "{p:?}");
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[test]
fn grid_points_form_a_lattice() {
    let (h, w) = (48, 64);
    let d = ramp(h, w);
    for (rho, seed) in [(0.05, 0), (0.02, 1), (0.1, 2)] {
        let (_, m) = sparsify(&d, SparsityPattern::Grid, rho, seed, None).unwrap();
        let pts: std::vec::Vec<(usize, usize)> = (0..h * w).filter(|&i| m.data()[i] == 1.0).map(|i| (i / w, i % w)).collect();
        let (y0, x0) = pts[0];
        let gy = pts.iter().fold(0, |g, p| gcd(g, p.0 - y0));
        let gx = pts.iter().fold(0, |g, p| gcd(g, p.1.abs_diff(x0)));
        let n = (rho * (h * w) as f64 + 1e-9).floor() as usize;
        let s = grid_stride(h, w, n);
        assert!(s > 1);
        assert_eq!((gy, gx), (s, s), "rho {rho}");
    }
}

#[test]
fn sparsify_errors() {
    let d = ramp(10, 10);
    assert!(matches!(sparsify(&d, SparsityPattern::UniformRandom, 0.005, 0, None), Err(Error::Contract(_))));
    assert!(sparsify(&d, SparsityPattern::UniformRandom, 0.0, 0, None).is_err());
    assert!(sparsify(&d, SparsityPattern::UniformRandom, 1.5, 0, None).is_err());
    let holes = Array::from_fn(&[1, 10, 10], |i| if i < 95 { 0.0 } else { 1.0 });
    assert!(sparsify(&holes, SparsityPattern::Grid, 0.1, 0, None).is_err());
    assert!(sparsify(&Array::zeros(&[2, 10, 10]), SparsityPattern::Grid, 0.1, 0, None).is_err());
}

#[test]
fn corners_prefer_textured_pixels() {
    // Left half flat, right half a checkerboard.
    let (h, w) = (16, 16);
    let img = Array::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        if x < 8 {
            0.5
        } else {
            ((x / 2 + y / 2) % 2) as f64
        }
    });
    let d = Array::full(&[1, h, w], 2.0);
    let (_, m) = sparsify(&d, SparsityPattern::CornerFeatures, 0.05, 0, Some(&img)).unwrap();
    let right = (0..h * w).filter(|&i| m.data()[i] == 1.0 && i % w >= 7).count();
    assert_eq!(right, 12);
}

#[test]
fn holdout_split_partitions_indices() {
    let s = holdout_split(2500, 0.2, 4).unwrap();
    assert_eq!((s.train.len(), s.eval.len()), (2000, 500));
    let mut all: std::vec::Vec<usize> = s.train.iter().chain(&s.eval).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..2500).collect::<std::vec::Vec<_>>());
    assert_eq!(s, holdout_split(2500, 0.2, 4).unwrap());
    assert_ne!(s, holdout_split(2500, 0.2, 5).unwrap());
    assert_eq!(holdout_split(3, 0.2, 0).unwrap().eval.len(), 1);
    assert!(holdout_split(0, 0.2, 0).is_err());
    assert!(holdout_split(10, 1.0, 0).is_err());
}

#[test]
fn slices_are_sample_sources() {
    let v = generate_domain(&small("rgbd-dense"), 2, 1).unwrap();
    assert_eq!(SampleSource::len(&v), 2);
    assert_eq!(v.sample(1).unwrap(), v[1]);
    assert!(v.sample(2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparsify_picks_exact_count_of_valid_points(
        h in 16usize..40, w in 16usize..40, rho in 0.01f64..0.5, seed in any::<u64>(),
        hole_every in 2usize..7, pat in 0usize..3,
    ) {
        let d = Array::from_fn(&[1, h, w], |i| if i % hole_every == 0 { 0.0 } else { 0.5 + (i % 13) as f64 });
        let pattern = [SparsityPattern::UniformRandom, SparsityPattern::Grid, SparsityPattern::CornerFeatures][pat];
        let n = (rho * (h * w) as f64 + 1e-9).floor() as usize;
        let (z, m) = sparsify(&d, pattern, rho, seed, None).unwrap();
        prop_assert_eq!(m.sum() as usize, n);
        for i in 0..h * w {
            if m.data()[i] == 1.0 {
                prop_assert!(d.data()[i] > 0.0);
                prop_assert_eq!(z.data()[i], d.data()[i]);
            } else {
                prop_assert_eq!(m.data()[i], 0.0);
                prop_assert_eq!(z.data()[i], 0.0);
            }
        }
        let again = sparsify(&d, pattern, rho, seed, None).unwrap();
        prop_assert_eq!(again.1, m);
    }
}
