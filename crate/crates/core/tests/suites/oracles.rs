//! Library routines against slow, loop-by-loop reimplementations on many
//! small random instances.

use crate::common;

use derender::formation::compose_planes;
use derender::losses::{albedo_loss, reconstruction_loss, shape_dependent_loss, shape_independent_loss};
use derender::metrics::lmse;
use derender::network::LightCode;
use derender::preprocess::{NormalMap, ShadowPrior};
use derender::synth::{generate, shadow_oracle, Geometry, SceneSpec, SURFACE_SKY};
use derender::{Mask, Plane};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 120;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

struct Instance {
    w: usize,
    h: usize,
    mask: Mask,
}

fn instance(r: &mut ChaCha8Rng) -> Instance {
    let (w, h) = (r.gen_range(2..12), r.gen_range(2..12));
    let mut data: Vec<bool> = (0..w * h).map(|_| r.gen_bool(0.7)).collect();
    let k = r.gen_range(0..w * h);
    data[k] = true;
    Instance {
        w,
        h,
        mask: Mask::new(w, h, data).unwrap(),
    }
}

fn plane(r: &mut ChaCha8Rng, inst: &Instance, c: usize, lo: f32, hi: f32) -> Plane {
    Plane::from_fn(inst.w, inst.h, c, |_, _, _| r.gen_range(lo..hi))
}

fn unit_normals(r: &mut ChaCha8Rng, inst: &Instance) -> NormalMap {
    let v = (0..inst.w * inst.h)
        .map(|_| {
            let n: [f64; 3] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.1..1.0)];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            [(n[0] / len) as f32, (n[1] / len) as f32, (n[2] / len) as f32]
        })
        .collect();
    NormalMap::new(inst.w, inst.h, v).unwrap()
}

fn valid_pixels(m: &Mask) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                out.push((x, y));
            }
        }
    }
    out
}

fn at(p: &Plane, x: usize, y: usize, c: usize) -> f64 {
    p.get(x, y, c) as f64
}

pub fn compose_matches_pixel_loop() {
    let mut r = common::rng(11);
    for _ in 0..INSTANCES {
        let inst = instance(&mut r);
        let a = plane(&mut r, &inst, 3, 0.0, 1.0);
        let sd = plane(&mut r, &inst, 3, 0.0, 2.0);
        let si = plane(&mut r, &inst, 1, 0.0, 1.0);
        let eps = plane(&mut r, &inst, 3, -0.05, 0.05);
        let with_eps = r.gen_bool(0.5);
        let got = compose_planes(&a, &sd, &si, with_eps.then_some(&eps)).unwrap();
        for y in 0..inst.h {
            for x in 0..inst.w {
                for c in 0..3 {
                    let mut want = at(&a, x, y, c) * at(&sd, x, y, c) * at(&si, x, y, 0);
                    if with_eps {
                        want += at(&eps, x, y, c);
                    }
                    assert!(close(at(&got, x, y, c), want, 1e-6), "{} vs {want}", got.get(x, y, c));
                    if !with_eps {
                        let scalar = a.get(x, y, c) * sd.get(x, y, c) * si.get(x, y, 0);
                        assert_eq!(got.get(x, y, c).to_bits(), scalar.to_bits());
                    }
                }
            }
        }
    }
}

pub fn albedo_loss_matches_pixel_loop() {
    let mut r = common::rng(12);
    for _ in 0..INSTANCES {
        let inst = instance(&mut r);
        let a = plane(&mut r, &inst, 3, 0.0, 1.0);
        let t = plane(&mut r, &inst, 3, 0.0, 1.0);
        let px = valid_pixels(&inst.mask);
        let mut want = 0.0;
        for &(x, y) in &px {
            want += (0..3).map(|c| (at(&a, x, y, c) - at(&t, x, y, c)).powi(2)).sum::<f64>() / 3.0;
        }
        want /= px.len() as f64;
        let got = albedo_loss(&a, &t, &inst.mask).unwrap();
        assert!(close(got, want, 1e-6), "{got} vs {want}");
    }
}

pub fn reconstruction_loss_matches_pixel_loop() {
    let mut r = common::rng(13);
    for _ in 0..INSTANCES {
        let inst = instance(&mut r);
        let a = plane(&mut r, &inst, 3, 0.0, 1.0);
        let sd = plane(&mut r, &inst, 3, 0.0, 2.0);
        let si = plane(&mut r, &inst, 1, 0.0, 1.0);
        let img = plane(&mut r, &inst, 3, 0.0, 1.0);
        let px = valid_pixels(&inst.mask);
        let mut want = 0.0;
        for &(x, y) in &px {
            let mut s = 0.0;
            for c in 0..3 {
                let pred = at(&a, x, y, c) * at(&sd, x, y, c) * at(&si, x, y, 0);
                s += (pred - at(&img, x, y, c)).powi(2);
            }
            want += s / 3.0;
        }
        want /= px.len() as f64;
        let got = reconstruction_loss(&a, &sd, &si, &img, &inst.mask).unwrap();
        assert!(close(got, want, 1e-6), "{got} vs {want}");
    }
}

pub fn shape_independent_loss_matches_pixel_loop() {
    let mut r = common::rng(14);
    for _ in 0..INSTANCES {
        let inst = instance(&mut r);
        let si = plane(&mut r, &inst, 1, 0.0, 1.0);
        let w = plane(&mut r, &inst, 1, 0.0, 0.4);
        let px = valid_pixels(&inst.mask);
        let mut want = 0.0;
        for &(x, y) in &px {
            let mut s = 0.0;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= inst.w as i64 || ny >= inst.h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if inst.mask.get(nx, ny) {
                    s += (at(&si, x, y, 0) - at(&si, nx, ny, 0)).powi(2);
                }
            }
            want += at(&w, x, y, 0) * s;
        }
        want /= px.len() as f64;
        let prior = ShadowPrior::from_plane(w).unwrap();
        let got = shape_independent_loss(&si, &prior, &inst.mask).unwrap();
        assert!(close(got, want, 1e-6), "{got} vs {want}");
    }
}

pub fn shape_dependent_loss_matches_pixel_loop() {
    let mut r = common::rng(15);
    for _ in 0..INSTANCES {
        let inst = instance(&mut r);
        let sd = plane(&mut r, &inst, 3, 0.0, 2.0);
        let a = plane(&mut r, &inst, 3, 0.0, 1.0);
        let img = plane(&mut r, &inst, 3, 0.0, 1.0);
        let w = plane(&mut r, &inst, 1, 0.0, 0.4);
        let normals = unit_normals(&mut r, &inst);
        let dim = 4 * r.gen_range(1..5);
        let code: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        // each group of four holds a direction scaled by intensity plus one spare slot
        let mut light = [0.0f64; 3];
        for chunk in code.chunks(4) {
            for k in 0..3 {
                light[k] += chunk[k] as f64;
            }
        }
        let px = valid_pixels(&inst.mask);
        let mut want = 0.0;
        for &(x, y) in &px {
            let n = normals.get(x, y);
            let target: f64 = (0..3).map(|k| n[k] as f64 * light[k]).sum();
            let mean_sd = (0..3).map(|c| at(&sd, x, y, c)).sum::<f64>() / 3.0;
            let recon = (0..3)
                .map(|c| (at(&a, x, y, c) * at(&sd, x, y, c) - at(&img, x, y, c)).powi(2))
                .sum::<f64>()
                / 3.0;
            want += (mean_sd - target).powi(2) + (1.0 - at(&w, x, y, 0)) * recon;
        }
        want /= px.len() as f64;
        let prior = ShadowPrior::from_plane(w).unwrap();
        let code = LightCode::new(code).unwrap();
        let got = shape_dependent_loss(&sd, &normals, &code, &a, &img, &prior, &inst.mask).unwrap();
        assert!(close(got, want, 1e-6), "{got} vs {want}");
    }
}

/// Minimum of the convex quadratic `sum (a p - g)^2` found by ternary search
/// on the scale rather than by the normal equation.
fn window_error_by_search(p: &[f64], g: &[f64]) -> f64 {
    let err = |a: f64| p.iter().zip(g).map(|(&p, &g)| (a * p - g).powi(2)).sum::<f64>();
    let (mut lo, mut hi) = (-1e3f64, 1e3f64);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if err(m1) <= err(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    err((lo + hi) / 2.0)
}

pub fn lmse_matches_windowed_search() {
    let mut r = common::rng(16);
    for _ in 0..INSTANCES {
        let (w, h) = (r.gen_range(6..20), r.gen_range(6..20));
        let window = r.gen_range(2..=w.min(h));
        let stride = r.gen_range(1..=window);
        let mut md: Vec<bool> = (0..w * h).map(|_| r.gen_bool(0.8)).collect();
        md[0] = true;
        let mask = Mask::new(w, h, md).unwrap();
        let c = if r.gen_bool(0.5) { 3 } else { 1 };
        let pred = Plane::from_fn(w, h, c, |_, _, _| r.gen_range(0.0..1.0));
        let gt = Plane::from_fn(w, h, c, |_, _, _| r.gen_range(0.0..1.0));

        let (mut total, mut count) = (0.0, 0usize);
        let mut y0 = 0;
        while y0 + window <= h {
            let mut x0 = 0;
            while x0 + window <= w {
                for ch in 0..c {
                    let (mut p, mut g) = (Vec::new(), Vec::new());
                    for y in y0..y0 + window {
                        for x in x0..x0 + window {
                            if mask.get(x, y) {
                                p.push(at(&pred, x, y, ch));
                                g.push(at(&gt, x, y, ch));
                            }
                        }
                    }
                    let gg: f64 = g.iter().map(|v| v * v).sum();
                    if gg > 0.0 {
                        total += window_error_by_search(&p, &g) / gg;
                        count += 1;
                    }
                }
                x0 += stride;
            }
            y0 += stride;
        }
        let want = total / count as f64;
        let got = lmse(&pred, &gt, &mask, window, stride).unwrap();
        assert!(close(got, want, 1e-6), "{got} vs {want} ({w}x{h}, window {window}, stride {stride})");
    }
}

const MARCH_STEP: f64 = 1e-3;

/// Walks toward the light in fixed steps and reports whether any sample lands
/// inside a box. Boxes never rise above `top`, so the walk stops there.
fn ray_march(geometry: &Geometry, p: [f64; 3], l: [f64; 3], top: f64) -> bool {
    let mut k = 1.0;
    loop {
        let q = [p[0] + k * MARCH_STEP * l[0], p[1] + k * MARCH_STEP * l[1], p[2] + k * MARCH_STEP * l[2]];
        if q[1] > top {
            return false;
        }
        if geometry.boxes.iter().any(|b| b.contains(q)) {
            return true;
        }
        k += 1.0;
    }
}

pub fn shadow_caster_matches_ray_march() {
    let (w, h) = (32, 24);
    let (mut compared, mut shadowed, mut exempt_disagreements) = (0usize, 0usize, 0usize);
    for seed in 0..100u64 {
        let spec = SceneSpec::new(w, h, 1000 + seed);
        let scene = generate(&spec).unwrap();
        let g = &scene.geometry;
        let top = g.boxes.iter().map(|b| b.max[1]).fold(0.0, f64::max) + MARCH_STEP;
        let origin = g.camera_origin();
        for light in &scene.lights {
            let d = light.direction_intensity.map(|v| v as f64);
            let wl = g.camera_to_world(d);
            let len = (wl[0] * wl[0] + wl[1] * wl[1] + wl[2] * wl[2]).sqrt();
            let l = wl.map(|v| v / len);

            let mut caster = vec![None; w * h];
            let mut march = vec![None; w * h];
            for v in 0..h {
                for u in 0..w {
                    let i = v * w + u;
                    if scene.surface[i] == SURFACE_SKY {
                        continue;
                    }
                    let dir = g.camera_to_world(spec.intrinsics.ray(u as f64, v as f64));
                    let Some((t, _, n)) = g.trace(origin, dir) else { continue };
                    let lit_side = n[0] * l[0] + n[1] * l[1] + n[2] * l[2] > 0.0;
                    if !lit_side {
                        continue;
                    }
                    let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
                    caster[i] = Some(shadow_oracle(g, p, n, l));
                    march[i] = Some(ray_march(g, p, l, top));
                }
            }
            for v in 0..h {
                for u in 0..w {
                    let i = v * w + u;
                    let (Some(a), Some(b)) = (caster[i], march[i]) else { continue };
                    compared += 1;
                    shadowed += a as usize;
                    if a == b {
                        continue;
                    }
                    // a disagreement is only allowed where the shadow or the surface changes
                    let on_band = (0..9).any(|k| {
                        let (x, y) = (u as i64 + k % 3 - 1, v as i64 + k / 3 - 1);
                        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                            return true;
                        }
                        let j = y as usize * w + x as usize;
                        scene.surface[j] != scene.surface[i] || caster[j] != Some(a)
                    });
                    assert!(on_band, "scene {seed}: pixel ({u},{v}) caster {a} march {b}");
                    exempt_disagreements += 1;
                }
            }
        }
    }
    assert!(shadowed > 100, "too few shadowed samples to be meaningful: {shadowed}");
    assert!(
        exempt_disagreements * 100 < compared,
        "{exempt_disagreements} boundary disagreements out of {compared}"
    );
}
