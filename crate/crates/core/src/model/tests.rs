use super::*;
use crate::data::{generate_domain, preset, preset_names};
use crate::diff::check_gradients_at;
use crate::losses::{total_loss, LossConfig};
use alloc::vec;

fn tiny_sample(h: usize, w: usize) -> Sample {
    let spec = preset("rgbd-dense").unwrap().with_size(h.max(16), w.max(16));
    let mut s = generate_domain(&spec, 1, 3).unwrap().remove(0);
    if h < 16 || w < 16 {
        // Crop the top-left corner; intrinsics keep their meaning.
        let crop = |a: &Array| {
            let (c, hh, ww) = a.chw().unwrap();
            Array::from_fn(&[c, h, w], |i| {
                let (ci, y, x) = (i / (h * w), (i / w) % h, i % w);
                a.data()[(ci * hh + y) * ww + x]
            })
        };
        s.image = crop(&s.image);
        s.prev_image = crop(&s.prev_image);
        s.next_image = crop(&s.next_image);
        s.sparse = crop(&s.sparse);
        s.mask = crop(&s.mask);
        s.ground_truth = s.ground_truth.as_ref().map(crop);
    }
    s
}

#[test]
fn default_layout_has_expected_parameter_count() {
    let cfg = DepthNetConfig::new(0.2, 5.0);
    // (out · in · 9 + out) per convolution.
    let convs = [(16, 5), (32, 16), (64, 32), (32, 96), (16, 48), (8, 21), (1, 8)];
    let expect: usize = convs.iter().map(|(o, i)| o * i * 9 + o).sum();
    assert_eq!(cfg.param_count(), expect);
    let names: Vec<String> = cfg.layout().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "enc1.weight");
    assert_eq!(names[6], "dec3.weight");
    assert_eq!(names.last().unwrap(), "head.bias");
}

#[test]
fn init_is_seeded_and_fan_in_bounded() {
    let cfg = DepthNetConfig::new(0.2, 5.0);
    let a = cfg.init_params(1).unwrap();
    assert_eq!(a, cfg.init_params(1).unwrap());
    assert_ne!(a, cfg.init_params(2).unwrap());
    for s in a.segments() {
        if s.name.ends_with(".bias") {
            assert!(s.value.data().iter().all(|b| *b == 0.0));
        } else {
            let sh = s.value.shape();
            let bound = 1.0 / ((sh[1] * sh[2] * sh[3]) as f64).sqrt();
            assert!(s.value.data().iter().all(|w| w.abs() < bound));
        }
    }
}

#[test]
fn output_shape_and_range_hold_for_several_configs() {
    let s = tiny_sample(16, 24);
    for (widths, head) in [(vec![4], 2), (vec![4, 6], 3), (vec![16, 32, 64], 8)] {
        let cfg = DepthNetConfig {
            widths,
            head_width: head,
            depth_min: 0.2,
            depth_max: 5.0,
        };
        let mut params = cfg.init_params(4).unwrap();
        let d = depth_net_forward(&cfg, &params, &s).unwrap();
        assert_eq!(d.shape(), &[1, 16, 24]);
        assert!(d.data().iter().all(|v| *v > 0.2 && *v < 5.0));
        // Large weights saturate the sigmoid but stay inside the bounds up
        // to rounding at the ends.
        let scaled: Vec<f64> = params.flatten().iter().map(|v| v * 50.0).collect();
        params = params.unflatten(&scaled).unwrap();
        let d = depth_net_forward(&cfg, &params, &s).unwrap();
        assert!(d.data().iter().all(|v| *v >= 0.2 && *v <= 5.0));
    }
}

#[test]
fn forward_is_deterministic() {
    let s = tiny_sample(16, 16);
    let cfg = DepthNetConfig::new(0.2, 5.0);
    let p = cfg.init_params(9).unwrap();
    let a = depth_net_forward(&cfg, &p, &s).unwrap();
    let b = depth_net_forward(&cfg, &p, &s).unwrap();
    assert_eq!(a, b);
}

#[test]
fn contract_errors() {
    let cfg = DepthNetConfig::new(0.2, 5.0);
    let p = cfg.init_params(0).unwrap();
    let s = tiny_sample(12, 16);
    assert!(depth_net_forward(&cfg, &p, &s).is_err(), "12 is not divisible by 8");
    let other = DepthNetConfig {
        widths: vec![8, 8],
        ..cfg.clone()
    };
    assert!(depth_net_forward(&other, &p, &tiny_sample(16, 16)).is_err());
    assert!(DepthNetConfig::new(5.0, 0.2).validate().is_err());
    assert!(DepthNetConfig { widths: vec![], ..cfg }.validate().is_err());
}

#[test]
fn leaky_activation_matches_definition() {
    let mut g = Graph::new();
    let x = g.constant(Array::new(&[4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap()).unwrap();
    let y = leaky(&mut g, x).unwrap();
    for (got, want) in g.value(y).data().iter().zip([-0.4, -0.1, 0.0, 3.0]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn loss_gradient_through_network_matches_differences() {
    let s = tiny_sample(8, 8);
    let cfg = DepthNetConfig::new(0.2, 5.0);
    let params = cfg.init_params(5).unwrap();
    let f = |g: &mut Graph, leaves: &[Var]| {
        let out = cfg.forward(g, leaves, &s.image, &s.sparse, &s.mask)?;
        Ok(total_loss(g, &s, out.depth, &LossConfig::default())?.total)
    };
    // One weight from each of five layers.
    let layout = cfg.layout();
    let offset = |seg: usize| layout[..seg].iter().map(|(_, sh)| sh.iter().product::<usize>()).sum::<usize>();
    let probe = [offset(0) + 7, offset(2) + 100, offset(4) + 333, offset(6) + 2001, offset(12) + 5];
    let err = check_gradients_at(&f, &params, 1e-6, &probe).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn representation_basics() {
    let s = tiny_sample(16, 16);
    let cfg = DepthNetConfig::new(0.2, 5.0);
    let p = cfg.init_params(2).unwrap();
    let a = encode_representation(&cfg, &p, &s).unwrap();
    assert_eq!(a.len(), 64);
    assert_eq!(a, encode_representation(&cfg, &p, &s.clone()).unwrap());
    assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(cosine_similarity(&a, &vec![0.0; 64]).is_err());
    assert!(cosine_similarity(&a, &a[..3]).is_err());
}

fn mean_cosine(a: &[Vec<f64>], b: &[Vec<f64>], same: bool) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if same && j <= i {
                continue;
            }
            total += cosine_similarity(x, y).unwrap();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn representations_separate_domains() {
    let names = preset_names();
    let cfg = DepthNetConfig::new(0.2, 100.0);
    let p = cfg.init_params(0).unwrap();
    let reps: Vec<Vec<Vec<f64>>> = names
        .iter()
        .map(|n| {
            generate_domain(&preset(n).unwrap(), 8, 1)
                .unwrap()
                .iter()
                .map(|s| encode_representation(&cfg, &p, s).unwrap())
                .collect()
        })
        .collect();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let within = 0.5 * (mean_cosine(&reps[i], &reps[i], true) + mean_cosine(&reps[j], &reps[j], true));
            let across = mean_cosine(&reps[i], &reps[j], false);
            assert!(across < within, "{} vs {}: across {across} within {within}", names[i], names[j]);
        }
    }
}
