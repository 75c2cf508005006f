//! Evaluation metrics: MSE, LMSE, DSSIM, WHDR, the overall-shading product
//! and the shadow separation measures used on synthetic scenes.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::{Mask, Plane};
use crate::synth::{dilate, Scene};

pub const LMSE_WINDOW: usize = 20;
pub const LMSE_STRIDE: usize = 10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const WHDR_DELTA: f64 = 0.10;

fn check_pair(pred: &Plane, gt: &Plane, mask: &Mask, op: &'static str) -> Result<()> {
    pred.check_same(gt, op)?;
    mask.check_plane(pred, op)
}

/// Masked mean of squared differences over valid pixels and all channels.
pub fn mse(pred: &Plane, gt: &Plane, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt, mask, "mse")?;
    let c = pred.channels();
    let (mut acc, mut n) = (0.0f64, 0usize);
    for (p, &ok) in mask.data().iter().enumerate() {
        if !ok {
            continue;
        }
        for (a, b) in pred.pixel(p).iter().zip(gt.pixel(p)) {
            let d = *a as f64 - *b as f64;
            acc += d * d;
        }
        n += c;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(acc / n as f64)
}

/// MSE after scaling `pred` by the single least-squares factor `<p,g>/<p,p>`.
pub fn mse_scale_invariant(pred: &Plane, gt: &Plane, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt, mask, "mse")?;
    let (mut pp, mut pg) = (0.0f64, 0.0f64);
    for (p, &ok) in mask.data().iter().enumerate() {
        if ok {
            for (a, b) in pred.pixel(p).iter().zip(gt.pixel(p)) {
                pp += *a as f64 * *a as f64;
                pg += *a as f64 * *b as f64;
            }
        }
    }
    let alpha = if pp > 0.0 { pg / pp } else { 0.0 };
    mse(&pred.map(|v| (v as f64 * alpha) as f32), gt, mask)
}

/// Local scale-invariant error: the mean over windows and channels of
/// `min_a |a p - g|^2 / |g|^2`, skipping windows where `|g|^2 = 0`.
pub fn lmse(pred: &Plane, gt: &Plane, mask: &Mask, window: usize, stride: usize) -> Result<f64> {
    check_pair(pred, gt, mask, "lmse")?;
    let (w, h, c) = (pred.width(), pred.height(), pred.channels());
    if window == 0 || stride == 0 || window > w || window > h {
        return Err(Error::Metric(format!(
            "lmse window {window} (stride {stride}) does not fit a {w}x{h} image"
        )));
    }
    let (mut total, mut count) = (0.0f64, 0usize);
    for y0 in (0..=h - window).step_by(stride) {
        for x0 in (0..=w - window).step_by(stride) {
            for ch in 0..c {
                let (mut pp, mut pg, mut gg) = (0.0f64, 0.0f64, 0.0f64);
                for y in y0..y0 + window {
                    for x in x0..x0 + window {
                        if mask.get(x, y) {
                            let (p, g) = (pred.get(x, y, ch) as f64, gt.get(x, y, ch) as f64);
                            pp += p * p;
                            pg += p * g;
                            gg += g * g;
                        }
                    }
                }
                if gg == 0.0 {
                    continue;
                }
                let alpha = if pp > 0.0 { pg / pp } else { 0.0 };
                let mut err = 0.0f64;
                for y in y0..y0 + window {
                    for x in x0..x0 + window {
                        if mask.get(x, y) {
                            let d = alpha * pred.get(x, y, ch) as f64 - gt.get(x, y, ch) as f64;
                            err += d * d;
                        }
                    }
                }
                total += err / gg;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Metric("lmse: no window has a nonzero reference".into()));
    }
    Ok(total / count as f64)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Valid-mode separable filtering of a `w x h` grid.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = k.iter().enumerate().map(|(i, t)| t * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = k.iter().enumerate().map(|(i, t)| t * rows[(oy + i) * ow + ox]).sum();
        }
    }
    (out, ow, oh)
}

/// Per-window SSIM values of one channel, valid windows only.
fn ssim_map(a: &[f64], b: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, _, _) = filter_valid(a, w, h, &k);
    let (mu_b, _, _) = filter_valid(b, w, h, &k);
    let (aa, _, _) = filter_valid(&prod(a, a), w, h, &k);
    let (bb, _, _) = filter_valid(&prod(b, b), w, h, &k);
    let (ab, _, _) = filter_valid(&prod(a, b), w, h, &k);
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

fn channel(p: &Plane, c: usize) -> Vec<f64> {
    p.data()
        .iter()
        .skip(c)
        .step_by(p.channels())
        .map(|&v| v as f64)
        .collect()
}

/// Structural dissimilarity `(1 - SSIM) / 2`, SSIM averaged over valid
/// windows and channels. Negative mean SSIM (anti-correlated content) is
/// floored at 0, so the result lies in `[0, 0.5]`.
pub fn dssim(pred: &Plane, gt: &Plane) -> Result<f64> {
    pred.check_same(gt, "dssim")?;
    let (w, h) = (pred.width(), pred.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "dssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, image is {w}x{h}"
        )));
    }
    let mut acc = 0.0;
    for c in 0..pred.channels() {
        let m = ssim_map(&channel(pred, c), &channel(gt, c), w, h);
        acc += m.iter().sum::<f64>() / m.len() as f64;
    }
    Ok(dissimilarity(acc / pred.channels() as f64))
}

fn dissimilarity(mean_ssim: f64) -> f64 {
    (1.0 - mean_ssim.max(0.0)) / 2.0
}

/// DSSIM over windows lying entirely inside the mask.
pub fn dssim_masked(pred: &Plane, gt: &Plane, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt, mask, "dssim")?;
    let (w, h) = (pred.width(), pred.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "dssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, image is {w}x{h}"
        )));
    }
    let ow = w + 1 - SSIM_WINDOW;
    let full: Vec<bool> = (0..ow * (h + 1 - SSIM_WINDOW))
        .map(|i| {
            let (x0, y0) = (i % ow, i / ow);
            (y0..y0 + SSIM_WINDOW).all(|y| (x0..x0 + SSIM_WINDOW).all(|x| mask.get(x, y)))
        })
        .collect();
    let n = full.iter().filter(|&&f| f).count();
    if n == 0 {
        return Err(Error::Metric("dssim: no window lies inside the mask".into()));
    }
    // zero the invalid pixels so the map stays finite; those windows are discarded
    let clean = |p: &Plane| {
        let mut q = p.clone();
        let c = q.channels();
        for (i, v) in q.data_mut().iter_mut().enumerate() {
            if !mask.data()[i / c] {
                *v = 0.0;
            }
        }
        q
    };
    let (pc, gc) = (clean(pred), clean(gt));
    let mut acc = 0.0;
    for c in 0..pred.channels() {
        let m = ssim_map(&channel(&pc, c), &channel(&gc, c), w, h);
        acc += m.iter().zip(&full).filter(|(_, &f)| f).map(|(v, _)| v).sum::<f64>() / n as f64;
    }
    Ok(dissimilarity(acc / pred.channels() as f64))
}

/// `S_d * S_i`, broadcasting a 1-channel `s_i` over colour.
pub fn overall_shading(s_d: &Plane, s_i: &Plane) -> Result<Plane> {
    s_d.check_size(s_i, "overall_shading")?;
    let (cd, ci) = (s_d.channels(), s_i.channels());
    if ci != 1 && ci != cd {
        return Err(Error::shape(
            "overall_shading",
            format!("{cd}-channel shading with {ci}-channel shadow"),
        ));
    }
    let mut out = s_d.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let p = i / cd;
        *v *= if ci == 1 { s_i.data()[p] } else { s_i.data()[i] };
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Darker {
    First,
    Second,
    Equal,
}

impl FromStr for Darker {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::First),
            "2" => Ok(Self::Second),
            "E" | "e" => Ok(Self::Equal),
            _ => Err(Error::Metric(format!("darker must be 1, 2 or E, got {s:?}"))),
        }
    }
}

/// One pairwise lightness judgment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Judgment {
    pub point1: (usize, usize),
    pub point2: (usize, usize),
    pub darker: Darker,
    pub weight: f64,
}

/// Parses `x1 y1 x2 y2 darker weight` lines; blank lines and `#` comments are skipped.
pub fn parse_judgments(text: &str) -> Result<Vec<Judgment>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Metric(format!("judgment line {}: {what}", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("expected `x1 y1 x2 y2 darker weight`"));
        }
        let coord = |s: &str| s.parse::<usize>().map_err(|_| bad("bad coordinate"));
        let weight: f64 = f[5].parse().map_err(|_| bad("bad weight"))?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(bad("weight must be non-negative"));
        }
        out.push(Judgment {
            point1: (coord(f[0])?, coord(f[1])?),
            point2: (coord(f[2])?, coord(f[3])?),
            darker: f[4].parse().map_err(|_| bad("darker must be 1, 2 or E"))?,
            weight,
        });
    }
    Ok(out)
}

/// Classifies a pair of luminances with threshold `delta`.
pub fn classify(l1: f64, l2: f64, delta: f64) -> Darker {
    if l1 * (1.0 + delta) < l2 {
        Darker::First
    } else if l1 > l2 * (1.0 + delta) {
        Darker::Second
    } else {
        Darker::Equal
    }
}

/// Weighted disagreement rate of `albedo` (luminance = channel mean) with the judgments.
pub fn whdr(albedo: &Plane, judgments: &[Judgment], delta: f64) -> Result<f64> {
    let lum = albedo.grey();
    let at = |(x, y): (usize, usize)| -> Result<f64> {
        if x >= lum.width() || y >= lum.height() {
            return Err(Error::Metric(format!(
                "judgment point ({x}, {y}) outside {}x{} image",
                lum.width(),
                lum.height()
            )));
        }
        Ok(lum.get(x, y, 0) as f64)
    };
    let (mut wrong, mut total) = (0.0, 0.0);
    for j in judgments {
        let pred = classify(at(j.point1)?, at(j.point2)?, delta);
        total += j.weight;
        if pred != j.darker {
            wrong += j.weight;
        }
    }
    if total <= 0.0 {
        return Err(Error::Metric("whdr: judgments carry zero total weight".into()));
    }
    Ok(wrong / total)
}

/// Which MSE variant to report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub scale_invariant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub albedo: f64,
    pub shading: f64,
}

impl MetricRow {
    pub fn avg(&self) -> f64 {
        (self.albedo + self.shading) / 2.0
    }
}

/// MSE, LMSE and DSSIM of albedo and shading predictions.
pub fn evaluate(
    pred_albedo: &Plane,
    pred_shading: &Plane,
    gt_albedo: &Plane,
    gt_shading: &Plane,
    mask: &Mask,
    opts: EvalOptions,
) -> Result<Vec<MetricRow>> {
    let m = |p: &Plane, g: &Plane| {
        if opts.scale_invariant {
            mse_scale_invariant(p, g, mask)
        } else {
            mse(p, g, mask)
        }
    };
    Ok(vec![
        MetricRow {
            metric: "MSE",
            albedo: m(pred_albedo, gt_albedo)?,
            shading: m(pred_shading, gt_shading)?,
        },
        MetricRow {
            metric: "LMSE",
            albedo: lmse(pred_albedo, gt_albedo, mask, LMSE_WINDOW, LMSE_STRIDE)?,
            shading: lmse(pred_shading, gt_shading, mask, LMSE_WINDOW, LMSE_STRIDE)?,
        },
        MetricRow {
            metric: "DSSIM",
            albedo: dssim_masked(pred_albedo, gt_albedo, mask)?,
            shading: dssim_masked(pred_shading, gt_shading, mask)?,
        },
    ])
}

/// Element-wise mean of several reports with the same rows.
pub fn mean_rows(reports: &[Vec<MetricRow>]) -> Vec<MetricRow> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let n = reports.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, r)| MetricRow {
            metric: r.metric,
            albedo: reports.iter().map(|x| x[i].albedo).sum::<f64>() / n,
            shading: reports.iter().map(|x| x[i].shading).sum::<f64>() / n,
        })
        .collect()
}

/// Plain-text table with columns `Albedo | Shading | Avg.`.
pub fn format_report(rows: &[MetricRow]) -> String {
    let mut s = format!("{:<8}{:>10}{:>10}{:>10}\n", "", "Albedo", "Shading", "Avg.");
    for r in rows {
        let _ = writeln!(s, "{:<8}{:>10.4}{:>10.4}{:>10.4}", r.metric, r.albedo, r.shading, r.avg());
    }
    s
}

/// Squared Pearson correlation of paired samples (0 when either side is constant).
pub fn r_squared(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len().min(gt.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mp = pred.iter().sum::<f64>() / n;
    let mg = gt.iter().sum::<f64>() / n;
    let (mut spp, mut sgg, mut spg) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        spp += (p - mp) * (p - mp);
        sgg += (g - mg) * (g - mg);
        spg += (p - mp) * (g - mg);
    }
    if spp <= 0.0 || sgg <= 0.0 {
        return 0.0;
    }
    spg * spg / (spp * sgg)
}

/// Mean forward-difference gradient magnitude of the channel mean of `p`
/// over pixels in `band` whose right and lower neighbours are also in `valid`.
pub fn gradient_energy(p: &Plane, band: &Mask, valid: &Mask) -> Result<f64> {
    let (acc, n) = gradient_sum(p, band, valid)?;
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(acc / n as f64)
}

fn gradient_sum(p: &Plane, band: &Mask, valid: &Mask) -> Result<(f64, usize)> {
    band.check_plane(p, "gradient_energy")?;
    valid.check_plane(p, "gradient_energy")?;
    let g = p.grey();
    let (w, h) = (p.width(), p.height());
    let (mut acc, mut n) = (0.0f64, 0usize);
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            if !band.get(x, y) || !valid.get(x, y) || !valid.get(x + 1, y) || !valid.get(x, y + 1) {
                continue;
            }
            let v = g.get(x, y, 0) as f64;
            let gx = g.get(x + 1, y, 0) as f64 - v;
            let gy = g.get(x, y + 1, 0) as f64 - v;
            acc += (gx * gx + gy * gy).sqrt();
            n += 1;
        }
    }
    Ok((acc, n))
}

/// How cleanly predicted cast shadows land in `S_i` rather than `S_d`,
/// pooled over a set of synthetic scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowSeparation {
    /// Squared correlation of predicted and true `S_i` near shadows.
    pub variance_explained: f64,
    /// Mean gradient magnitude of predicted `S_d` on shadow boundaries.
    pub sd_boundary_energy: f64,
    /// Same for predicted `S_i`.
    pub si_boundary_energy: f64,
}

impl ShadowSeparation {
    pub fn energy_ratio(&self) -> f64 {
        self.sd_boundary_energy / self.si_boundary_energy
    }
}

/// Pixels whose normal has a positive dot product with some light direction.
pub fn light_facing(scene: &Scene) -> Mask {
    let data = scene
        .normals
        .vectors()
        .iter()
        .map(|n| {
            scene.lights.iter().any(|l| {
                let d = l.direction_intensity;
                n[0] * d[0] + n[1] * d[1] + n[2] * d[2] > 0.0
            })
        })
        .collect();
    Mask::new(scene.width(), scene.height(), data).expect("scene dims")
}

/// Pixels within this many pixels of a shadowed pixel form the shadow region.
pub const SHADOW_REGION_RADIUS: usize = 3;

/// Scores `(scene, predicted S_i, predicted S_d)` triples.
///
/// The shadow region is every valid pixel within [`SHADOW_REGION_RADIUS`] of
/// a shadowed one whose surface faces at least one light. Surfaces turned
/// away from every light get no direct light to block, so their darkness is
/// shape-dependent shading and they are left out. Boundary bands are pixels
/// next to an `S_i` transition that sit inside a single surface, so geometric
/// edges do not count.
pub fn shadow_separation(items: &[(&Scene, &Plane, &Plane)]) -> Result<ShadowSeparation> {
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    let (mut sd_sum, mut si_sum, mut n) = (0.0, 0.0, 0usize);
    for (scene, s_i, s_d) in items {
        scene.s_i.check_size(s_i, "shadow_separation")?;
        scene.s_i.check_size(s_d, "shadow_separation")?;
        let (w, h) = (scene.width(), scene.height());
        let shadowed: Vec<bool> = scene.s_i.data().iter().map(|&v| v < 1.0).collect();
        let region = dilate(&shadowed, w, h, SHADOW_REGION_RADIUS).and(&scene.mask);
        let region = region.and(&light_facing(scene));
        let si_grey = s_i.grey();
        for (i, &r) in region.data().iter().enumerate() {
            if r {
                pred.push(si_grey.data()[i] as f64);
                gt.push(scene.s_i.data()[i] as f64);
            }
        }
        let interior = scene.interior();
        let band = scene.shadow_boundary(1).and(&interior);
        let (a, k) = gradient_sum(s_d, &band, &interior)?;
        let (b, _) = gradient_sum(s_i, &band, &interior)?;
        sd_sum += a;
        si_sum += b;
        n += k;
    }
    if gt.is_empty() || n == 0 {
        return Err(Error::Metric("shadow_separation: scenes contain no cast shadows".into()));
    }
    Ok(ShadowSeparation {
        variance_explained: r_squared(&pred, &gt),
        sd_boundary_energy: sd_sum / n as f64,
        si_boundary_energy: si_sum / n as f64,
    })
}
