use crate::common;

use derender::formation::compose_planes;
use derender::metrics::{
    dssim, dssim_masked, evaluate, format_report, lmse, mse, overall_shading, parse_judgments, whdr, EvalOptions,
    LMSE_STRIDE, LMSE_WINDOW, WHDR_DELTA,
};
use derender::{Mask, Plane};
use proptest::prelude::*;
use rand::Rng;

fn random_plane(seed: u64, w: usize, h: usize, c: usize) -> Plane {
    let mut r = common::rng(seed);
    Plane::from_fn(w, h, c, |_, _, _| r.gen_range(0.0..1.0))
}

pub fn mse_fixtures_and_loop_oracle() {
    let gt = random_plane(1, 9, 7, 3);
    let full = Mask::full(9, 7);
    assert_eq!(mse(&gt, &gt, &full).unwrap(), 0.0);
    let off = gt.map(|v| v + 0.1);
    assert!((mse(&off, &gt, &full).unwrap() - 0.01).abs() < 1e-6);

    let pred = random_plane(2, 9, 7, 3);
    let mut r = common::rng(3);
    let mask = Mask::new(9, 7, (0..63).map(|i| i == 0 || r.gen_bool(0.6)).collect()).unwrap();
    let (mut sum, mut n) = (0.0f64, 0);
    for y in 0..7 {
        for x in 0..9 {
            if mask.get(x, y) {
                for c in 0..3 {
                    sum += (pred.get(x, y, c) as f64 - gt.get(x, y, c) as f64).powi(2);
                    n += 1;
                }
            }
        }
    }
    assert!((mse(&pred, &gt, &mask).unwrap() - sum / n as f64).abs() < 1e-9);
}

pub fn lmse_is_scale_invariant() {
    let gt = random_plane(4, 40, 30, 3);
    let full = Mask::full(40, 30);
    for c in [0.25f32, 0.7, 1.0, 3.0] {
        let pred = gt.map(|v| v * c);
        let e = lmse(&pred, &gt, &full, LMSE_WINDOW, LMSE_STRIDE).unwrap();
        assert!(e.abs() < 1e-9, "scale {c}: {e}");
    }
    // a fixed rescale of any prediction leaves the error unchanged
    let pred = random_plane(5, 40, 30, 3);
    let base = lmse(&pred, &gt, &full, LMSE_WINDOW, LMSE_STRIDE).unwrap();
    let scaled = lmse(&pred.map(|v| v * 4.0), &gt, &full, LMSE_WINDOW, LMSE_STRIDE).unwrap();
    assert!((base - scaled).abs() < 1e-9);
}

pub fn lmse_orthogonal_windows_score_one() {
    let gt = Plane::from_fn(40, 40, 1, |x, _, _| if x % 2 == 0 { 1.0 } else { 0.0 });
    let pred = Plane::from_fn(40, 40, 1, |x, _, _| if x % 2 == 1 { 0.8 } else { 0.0 });
    let e = lmse(&pred, &gt, &Mask::full(40, 40), LMSE_WINDOW, LMSE_STRIDE).unwrap();
    assert_eq!(e, 1.0);
}

pub fn dssim_identity_and_symmetry() {
    let a = random_plane(6, 24, 20, 3);
    let b = random_plane(7, 24, 20, 3);
    assert_eq!(dssim(&a, &a).unwrap(), 0.0);
    let (ab, ba) = (dssim(&a, &b).unwrap(), dssim(&b, &a).unwrap());
    assert!(ab > 0.0);
    assert!((ab - ba).abs() < 1e-9);
    let full = Mask::full(24, 20);
    assert_eq!(dssim_masked(&a, &a, &full).unwrap(), 0.0);
    assert!((dssim_masked(&a, &b, &full).unwrap() - ab).abs() < 1e-12);
}

pub fn dssim_of_inverted_binary_image() {
    let mut r = common::rng(8);
    let gt = Plane::from_fn(16, 16, 1, |_, _, _| if r.gen_bool(0.5) { 1.0 } else { 0.0 });
    let inv = gt.map(|v| 1.0 - v);
    let d = dssim(&inv, &gt).unwrap();
    assert!(d > dssim(&gt, &gt).unwrap());
    assert!(d > 0.0 && d <= 0.5, "{d}");
}

/// SSIM written out per window with a 2-D Gaussian and centred moments.
fn ssim_direct(a: &Plane, b: &Plane, c: usize) -> f64 {
    const N: usize = 11;
    const SIGMA: f64 = 1.5;
    let mut weights = [[0.0f64; N]; N];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(di * di + dj * dj) / (2.0 * SIGMA * SIGMA)).exp();
            total += *w;
        }
    }
    let (c1, c2) = (0.0001, 0.0009);
    let (ww, hh) = (a.width(), a.height());
    let (mut sum, mut count) = (0.0, 0);
    for y0 in 0..=hh - N {
        for x0 in 0..=ww - N {
            let at = |p: &Plane, i: usize, j: usize| p.get(x0 + j, y0 + i, c) as f64;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..N {
                for j in 0..N {
                    let w = weights[i][j] / total;
                    ma += w * at(a, i, j);
                    mb += w * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..N {
                for j in 0..N {
                    let w = weights[i][j] / total;
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

pub fn dssim_matches_direct_formula() {
    let a = random_plane(9, 16, 16, 3);
    let b = Plane::from_fn(16, 16, 3, |x, y, c| {
        (0.5 * a.get(x, y, c) + 0.3 * ((x + 2 * y + c) % 5) as f32 / 5.0).min(1.0)
    });
    let want = (1.0 - (0..3).map(|c| ssim_direct(&a, &b, c)).sum::<f64>() / 3.0) / 2.0;
    let got = dssim(&a, &b).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

pub fn whdr_hand_cases() {
    // darker point is listed first, second, or the pair is equal
    let albedo = Plane::new(3, 1, 3, vec![0.2, 0.2, 0.2, 0.6, 0.6, 0.6, 0.61, 0.61, 0.61]).unwrap();
    let agree = parse_judgments("0 0 1 0 1 1\n1 0 0 0 2 1\n1 0 2 0 E 1\n").unwrap();
    assert_eq!(whdr(&albedo, &agree, WHDR_DELTA).unwrap(), 0.0);

    let wrong = parse_judgments("0 0 1 0 2 1").unwrap();
    assert_eq!(whdr(&albedo, &wrong, WHDR_DELTA).unwrap(), 1.0);

    let mixed = parse_judgments("# weights 1, 2, 1\n0 0 1 0 1 1\n0 0 1 0 E 2\n1 0 2 0 E 1\n").unwrap();
    assert_eq!(whdr(&albedo, &mixed, WHDR_DELTA).unwrap(), 0.5);
}

proptest! {
    fn whdr_ignores_global_scale_property(
        vals in prop::collection::vec(0.01f32..1.0, 8),
        pairs in prop::collection::vec((0usize..8, 0usize..8, 0u8..3, 0.1f64..3.0), 1..12),
        k in -3i32..4,
    ) {
        let albedo = Plane::new(8, 1, 1, vals).unwrap();
        let text: String = pairs
            .iter()
            .map(|(a, b, d, w)| format!("{a} 0 {b} 0 {} {w}\n", ["1", "2", "E"][*d as usize]))
            .collect();
        let js = parse_judgments(&text).unwrap();
        // powers of two keep every scaled value exact
        let scaled = albedo.map(|v| v * 2f32.powi(k));
        prop_assert_eq!(whdr(&albedo, &js, WHDR_DELTA).unwrap(), whdr(&scaled, &js, WHDR_DELTA).unwrap());
    }
}

pub fn whdr_ignores_global_scale() {
    whdr_ignores_global_scale_property();
}


pub fn overall_shading_fixtures() {
    let sd = random_plane(10, 5, 4, 3);
    let si = random_plane(11, 5, 4, 1);
    assert_eq!(overall_shading(&sd, &Plane::filled(5, 4, 1, 1.0)).unwrap(), sd);
    assert!(overall_shading(&Plane::zeros(5, 4, 3), &si).unwrap().data().iter().all(|&v| v == 0.0));
    let ones = Plane::filled(5, 4, 3, 1.0);
    assert_eq!(overall_shading(&sd, &si).unwrap(), compose_planes(&ones, &sd, &si, None).unwrap());
}

pub fn identical_prediction_gives_zero_rows() {
    let a = random_plane(12, 32, 24, 3);
    let s = random_plane(13, 32, 24, 3);
    let rows = evaluate(&a, &s, &a, &s, &Mask::full(32, 24), EvalOptions::default()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.metric).collect();
    assert_eq!(names, ["MSE", "LMSE", "DSSIM"]);
    for r in &rows {
        assert_eq!((r.albedo, r.shading, r.avg()), (0.0, 0.0, 0.0), "{}", r.metric);
    }
    let report = format_report(&rows);
    let header: Vec<&str> = report.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Albedo", "Shading", "Avg."]);
}
