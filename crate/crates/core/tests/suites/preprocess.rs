use crate::common;

use derender::preprocess::{
    depth_to_normal, disparity_pixel_depth, disparity_to_depth, pseudo_shading, pseudo_shading_rgb,
    shadow_prior, shadow_prior_value, valid_mask, DepthMap, Intrinsics, NormalMap, DEFAULT_SKY_THRESHOLD,
};
use derender::synth::{generate, sphere_depth, SceneSpec};
use derender::{Error, Mask, Plane};
use proptest::prelude::*;
use rand::Rng;

pub fn disparity_decoding_is_bit_exact() {
    let mut r = common::rng(21);
    let mut zeros = 0;
    for i in 0..10_000 {
        // a slice of the draws keeps high bytes at zero so small denominators are covered
        let px: [u8; 3] = if i % 4 == 0 {
            [0, r.gen_range(0..3), r.gen()]
        } else {
            [r.gen(), r.gen(), r.gen()]
        };
        let denom = px[2] as u32 + 256 * px[1] as u32 + 65536 * px[0] as u32;
        let got = disparity_pixel_depth(px);
        if denom == 0 {
            assert_eq!(got, 0.0);
            zeros += 1;
        } else {
            // denominators stay below 2^24 and are exact in f32
            let want = 1.0f32 / denom as f32;
            assert_eq!(got.to_bits(), want.to_bits(), "{px:?}");
        }
    }
    assert!(zeros < 10_000);
}

pub fn disparity_examples_and_invalid_pixels() {
    let bytes = [0, 0, 1, 0, 1, 0, 0, 0, 0];
    let d = disparity_to_depth(3, 1, &bytes).unwrap();
    assert_eq!(d.values()[0], 1.0);
    assert_eq!(d.values()[1], 0.003_906_25);
    assert!(d.valid().get(0, 0) && d.valid().get(1, 0));
    assert!(!d.valid().get(2, 0));
    assert!((d.log_normalized()[0] as f64 - 100f64.ln()).abs() < 1e-6);
    assert!(matches!(disparity_to_depth(2, 1, &bytes), Err(Error::Shape { .. })));
}

pub fn shadow_prior_reference_points() {
    for (s, w) in [(0.0, 0.398_942_280_401_432_7), (1.0, 0.241_970_724_519_143_37), (10.0, 7.694_598_626_706_42e-23)] {
        let got = shadow_prior_value(s);
        assert!((got - w).abs() < 1e-9, "W({s}) = {got}");
        assert!(((got - w) / w).abs() < 1e-9, "W({s}) = {got}");
    }
    assert!((shadow_prior_value(0.0) - 0.398942).abs() < 1e-6);
    assert!((shadow_prior_value(1.0) - 0.241971).abs() < 1e-6);
    let p = shadow_prior(&Plane::new(3, 1, 1, vec![0.0, 1.0, 10.0]).unwrap());
    assert!((p.plane().data()[1] as f64 - 0.241971).abs() < 1e-6);
}

pub fn constant_depth_plane_faces_the_camera() {
    let k = Intrinsics::centered(16, 12);
    let depth = DepthMap::from_values(16, 12, vec![4.0; 16 * 12]).unwrap();
    let n = depth_to_normal(&depth, &k);
    for v in n.vectors() {
        assert!((v[0].abs() + v[1].abs()) < 1e-6 && (v[2] - 1.0).abs() < 1e-6, "{v:?}");
    }
}

fn angle(a: [f32; 3], b: [f32; 3]) -> f64 {
    let d: f64 = (0..3).map(|i| a[i] as f64 * b[i] as f64).sum();
    d.clamp(-1.0, 1.0).acos()
}

pub fn ramp_plane_normal_is_exact_on_interior() {
    let (w, h) = (24, 18);
    let k = Intrinsics::centered(w, h);
    for (a, b) in [(0.5, 0.0), (-0.8, 0.0), (0.3, 0.4)] {
        // camera-space plane z = z0 + a x + b y, intersected with every pixel ray
        let z0 = -6.0;
        let values = (0..w * h)
            .map(|i| {
                let r = k.ray((i % w) as f64, (i / w) as f64);
                let t = -z0 / (1.0 + a * r[0] + b * r[1]);
                t as f32
            })
            .collect();
        let n = depth_to_normal(&DepthMap::from_values(w, h, values).unwrap(), &k);
        let len = (a * a + b * b + 1.0f64).sqrt();
        let want = [(-a / len) as f32, (-b / len) as f32, (1.0 / len) as f32];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let got = n.get(x, y);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-3, "({x},{y}) {got:?} vs {want:?}");
                }
            }
        }
    }
}

pub fn sphere_normals_match_analytic_normals() {
    let (w, h) = (64, 48);
    let k = Intrinsics::centered(w, h);
    let (depth, truth) = sphere_depth(w, h, &k, [0.1, -0.05, -4.0], 1.2).unwrap();
    let n = depth_to_normal(&depth, &k);
    let valid = depth.valid();
    let (mut sum, mut count) = (0.0, 0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let interior = (0..9).all(|j| valid.get(x + j % 3 - 1, y + j / 3 - 1));
            if interior {
                sum += angle(n.get(x, y), truth.get(x, y));
                count += 1;
            }
        }
    }
    assert!(count > 300, "sphere covers too little of the frame: {count}");
    let mean = sum / count as f64;
    assert!(mean < 2e-2, "mean angular error {mean}");
}

pub fn synthetic_scene_normals_match_ground_truth() {
    for seed in 0..8 {
        let scene = generate(&SceneSpec::new(64, 48, seed)).unwrap();
        let n = depth_to_normal(&scene.depth, &scene.intrinsics);
        let interior = scene.interior();
        let (mut sum, mut count) = (0.0, 0);
        for y in 0..48 {
            for x in 0..64 {
                if interior.get(x, y) {
                    sum += angle(n.get(x, y), scene.normals.get(x, y));
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        assert!(mean < 2e-2, "scene {seed}: mean angular error {mean}");
    }
}

pub fn isolated_pixels_are_flagged() {
    let mut values = vec![0.0; 25];
    values[12] = 3.0;
    let depth = DepthMap::from_values(5, 5, values).unwrap();
    let n = depth_to_normal(&depth, &Intrinsics::centered(5, 5));
    assert!(n.flagged().get(2, 2));
    assert_eq!(n.get(2, 2), [0.0, 0.0, 1.0]);
}

pub fn pseudo_shading_branches() {
    let a = Plane::filled(2, 2, 3, 0.4);
    let g = |i: &Plane| pseudo_shading(i, &a).unwrap().data().to_vec();
    assert_eq!(g(&a), vec![1.0; 4]);
    assert!(g(&a.map(|v| v * 0.5)).iter().all(|&s| (s - 0.5).abs() < 1e-6));
    assert_eq!(g(&a.map(|v| v * 2.0)), vec![10.0; 4]);
    let black = Plane::zeros(2, 2, 3);
    assert!(pseudo_shading(&a, &black).unwrap().data().iter().all(|s| s.is_finite()));
    assert!(pseudo_shading(&a, &Plane::zeros(2, 3, 3)).is_err());
}

pub fn valid_mask_matches_synthetic_sky() {
    let scene = generate(&SceneSpec::new(64, 48, 4)).unwrap();
    let mask = valid_mask(&scene.depth, DEFAULT_SKY_THRESHOLD).unwrap();
    assert_eq!(mask, scene.mask);
    let all = valid_mask(&scene.depth, f32::INFINITY).unwrap();
    assert_eq!(&all, scene.depth.valid());
    let sky = DepthMap::from_values(2, 2, vec![1000.0; 4]).unwrap();
    assert!(matches!(valid_mask(&sky, DEFAULT_SKY_THRESHOLD), Err(Error::EmptyMask)));
}

fn depth_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (3usize..10, 3usize..10).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0.5f32..20.0, w * h)))
}

proptest! {
    fn normals_are_unit_length_property((w, h, values) in depth_strategy()) {
        let depth = DepthMap::from_values(w, h, values).unwrap();
        let n: NormalMap = depth_to_normal(&depth, &Intrinsics::centered(w, h));
        for v in n.vectors() {
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            prop_assert!((len - 1.0).abs() < 1e-5);
        }
    }

    fn prior_is_bounded_and_decreasing_property(a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(shadow_prior_value(lo) >= shadow_prior_value(hi));
        prop_assert!(shadow_prior_value(lo) <= 1.0 / (2.0 * std::f64::consts::PI).sqrt());
        prop_assert!(shadow_prior_value(hi) >= 0.0);
    }

    fn pseudo_shading_recomposes_dim_pixels_property(
        data in prop::collection::vec((0.01f32..1.0, 0.0f32..1.0), 12)
    ) {
        let albedo = Plane::new(2, 2, 3, data.iter().map(|d| d.0).collect()).unwrap();
        let image = Plane::new(2, 2, 3, data.iter().map(|d| d.0 * d.1).collect()).unwrap();
        let s = pseudo_shading_rgb(&image, &albedo).unwrap();
        for ((&sv, &a), &i) in s.data().iter().zip(albedo.data()).zip(image.data()) {
            prop_assert!(sv <= 1.0);
            prop_assert!((a * sv - i).abs() <= f32::EPSILON * i.max(f32::MIN_POSITIVE));
        }
    }

    fn masks_never_include_invalid_depth_property((w, h, mut values) in depth_strategy(), holes in prop::collection::vec(any::<bool>(), 81)) {
        for (v, &hole) in values.iter_mut().zip(&holes) {
            if hole {
                *v = 0.0;
            }
        }
        let depth = DepthMap::from_values(w, h, values.clone()).unwrap();
        if let Ok(m) = valid_mask(&depth, 10.0) {
            let m: Mask = m;
            for (ok, v) in m.data().iter().zip(&values) {
                prop_assert_eq!(*ok, *v > 0.0 && *v < 10.0);
            }
        }
    }
}

pub fn normals_are_unit_length() {
    normals_are_unit_length_property();
}

pub fn prior_is_bounded_and_decreasing() {
    prior_is_bounded_and_decreasing_property();
}

pub fn pseudo_shading_recomposes_dim_pixels() {
    pseudo_shading_recomposes_dim_pixels_property();
}

pub fn masks_never_include_invalid_depth() {
    masks_never_include_invalid_depth_property();
}

