//! Auxiliary training labels derived from raw inputs: depth, normals,
//! pseudo-shading, the shadow prior and the valid-pixel mask.
//!
//! Camera-space vectors (normals, light directions) use the frame
//! x right, y up, z toward the viewer. A point seen at pixel `(u, v)` with
//! depth `d` unprojects to `((u - cx) d / f, -(v - cy) d / f, -d)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::plane::{Mask, Plane};

/// Rescale applied to depth before the log transform used as network input.
pub const DEPTH_RESCALE: f64 = 100.0;
/// Value assigned to pseudo-shading samples above 1.
pub const PSEUDO_SHADING_HIGH: f32 = 10.0;
/// Floor applied to albedo before dividing.
pub const ALBEDO_FLOOR: f32 = 1e-4;
pub const DEFAULT_SKY_THRESHOLD: f32 = 300.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    log_normalized: Vec<f32>,
    valid: Mask,
}

impl DepthMap {
    /// Pixels with finite positive depth are valid.
    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(
                "depth",
                format!("{width}x{height} vs {} values", values.len()),
            ));
        }
        let valid: Vec<bool> = values.iter().map(|&d| d.is_finite() && d > 0.0).collect();
        let log_normalized = values
            .iter()
            .zip(&valid)
            .map(|(&d, &ok)| if ok { log_normalize(d) } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            values,
            log_normalized,
            valid: Mask::new(width, height, valid)?,
        })
    }

    /// From a 1-channel plane (e.g. a depth FPM); non-positive samples are invalid.
    pub fn from_plane(p: &Plane) -> Result<Self> {
        if p.channels() != 1 {
            return Err(Error::shape("depth", format!("expected 1 channel, got {}", p.channels())));
        }
        Self::from_values(p.width(), p.height(), p.data().to_vec())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn log_normalized(&self) -> &[f32] {
        &self.log_normalized
    }

    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn to_plane(&self) -> Plane {
        Plane::new(self.width, self.height, 1, self.values.clone()).expect("depth dims")
    }

    /// Network input plane `log(100 d)`, zero at invalid pixels.
    pub fn log_plane(&self) -> Plane {
        Plane::new(self.width, self.height, 1, self.log_normalized.clone()).expect("depth dims")
    }
}

pub fn log_normalize(depth: f32) -> f32 {
    (DEPTH_RESCALE * depth as f64).ln() as f32
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(f: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Config(format!("focal length must be positive, got {f}")));
        }
        Ok(Self { f, cx, cy })
    }

    /// Principal point at the image centre, focal length equal to the width.
    pub fn centered(width: usize, height: usize) -> Self {
        Self {
            f: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Camera-space point for pixel `(u, v)` at depth `d`.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) * d / self.f, -(v - self.cy) * d / self.f, -d]
    }

    /// Unit ray direction through pixel `(u, v)`, scaled so its z component is -1.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        self.unproject(u, v, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    vectors: Vec<[f32; 3]>,
    flagged: Mask,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, vectors: Vec<[f32; 3]>) -> Result<Self> {
        if vectors.len() != width * height {
            return Err(Error::shape("normals", format!("{width}x{height} vs {}", vectors.len())));
        }
        Ok(Self {
            width,
            height,
            vectors,
            flagged: Mask::new(width, height, vec![false; width * height])?,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[[f32; 3]] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.vectors[y * self.width + x]
    }

    /// Pixels whose normal could not be estimated (no valid neighbour).
    pub fn flagged(&self) -> &Mask {
        &self.flagged
    }

    pub fn to_plane(&self) -> Plane {
        let data = self.vectors.iter().flat_map(|v| v.iter().copied()).collect();
        Plane::new(self.width, self.height, 3, data).expect("normal dims")
    }

    pub fn from_plane(p: &Plane) -> Result<Self> {
        if p.channels() != 3 {
            return Err(Error::shape("normals", format!("expected 3 channels, got {}", p.channels())));
        }
        let vectors = p.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(p.width(), p.height(), vectors)
    }
}

/// Depth from an FSVG-style 3-channel disparity encoding:
/// `1 / (disp[2] + disp[1] * 256 + disp[0] * 256^2)`. Zero denominators are invalid.
pub fn disparity_to_depth(width: usize, height: usize, disp: &[u8]) -> Result<DepthMap> {
    if disp.len() != width * height * 3 {
        return Err(Error::shape(
            "disparity_to_depth",
            format!("{width}x{height}x3 needs {} bytes, got {}", width * height * 3, disp.len()),
        ));
    }
    let values = disp
        .chunks_exact(3)
        .map(|px| disparity_pixel_depth([px[0], px[1], px[2]]))
        .collect();
    DepthMap::from_values(width, height, values)
}

/// Depth of one disparity triple; `0.0` (invalid) when the denominator is zero.
pub fn disparity_pixel_depth(px: [u8; 3]) -> f32 {
    let denom = px[2] as f64 + px[1] as f64 * 256.0 + px[0] as f64 * 65536.0;
    if denom > 0.0 {
        (1.0 / denom) as f32
    } else {
        0.0
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Surface normals `normalize([-z_x, -z_y, 1])` from central differences of
/// the camera-space z coordinate over the unprojected grid. Borders and mask
/// edges fall back to one-sided differences; pixels with no valid neighbour
/// along an axis get `[0, 0, 1]` and are flagged.
pub fn depth_to_normal(depth: &DepthMap, k: &Intrinsics) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let valid = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && depth.valid.get(x as usize, y as usize)
    };
    let point = |x: usize, y: usize| k.unproject(x as f64, y as f64, depth.get(x, y) as f64);
    // chord along one axis through (x, y), or None if isolated along it
    let chord = |x: usize, y: usize, dx: isize, dy: isize| -> Option<[f64; 3]> {
        let (xi, yi) = (x as isize, y as isize);
        let fwd = valid(xi + dx, yi + dy);
        let bwd = valid(xi - dx, yi - dy);
        let at = |sx: isize, sy: isize| point(sx as usize, sy as usize);
        match (bwd, fwd) {
            (true, true) => Some(sub3(at(xi + dx, yi + dy), at(xi - dx, yi - dy))),
            (false, true) => Some(sub3(at(xi + dx, yi + dy), point(x, y))),
            (true, false) => Some(sub3(point(x, y), at(xi - dx, yi - dy))),
            (false, false) => None,
        }
    };

    let mut vectors = vec![[0.0f32, 0.0, 1.0]; w * h];
    let mut flagged = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !depth.valid.get(x, y) {
                continue;
            }
            let i = y * w + x;
            let (Some(du), Some(dv)) = (chord(x, y, 1, 0), chord(x, y, 0, 1)) else {
                flagged[i] = true;
                continue;
            };
            // solve [du.x du.y; dv.x dv.y] [z_x; z_y] = [du.z; dv.z]
            let det = du[0] * dv[1] - du[1] * dv[0];
            let scale = (du[0].abs() + du[1].abs()) * (dv[0].abs() + dv[1].abs());
            if det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                flagged[i] = true;
                continue;
            }
            let zx = (du[2] * dv[1] - du[1] * dv[2]) / det;
            let zy = (du[0] * dv[2] - du[2] * dv[0]) / det;
            let norm = (zx * zx + zy * zy + 1.0).sqrt();
            vectors[i] = [(-zx / norm) as f32, (-zy / norm) as f32, (1.0 / norm) as f32];
        }
    }
    NormalMap {
        width: w,
        height: h,
        vectors,
        flagged: Mask::new(w, h, flagged).expect("dims"),
    }
}

/// Colour pseudo-shading `I / max(A, 1e-4)` with samples above 1 replaced by 10.
pub fn pseudo_shading_rgb(image: &Plane, albedo: &Plane) -> Result<Plane> {
    image.check_same(albedo, "pseudo_shading")?;
    let data = image
        .data()
        .iter()
        .zip(albedo.data())
        .map(|(&i, &a)| {
            let s = i / a.max(ALBEDO_FLOOR);
            if s > 1.0 {
                PSEUDO_SHADING_HIGH
            } else {
                s
            }
        })
        .collect();
    Plane::new(image.width(), image.height(), image.channels(), data)
}

/// Greyscale pseudo-shading `S_grey`: the channel mean of [`pseudo_shading_rgb`].
pub fn pseudo_shading(image: &Plane, albedo: &Plane) -> Result<Plane> {
    Ok(pseudo_shading_rgb(image, albedo)?.grey())
}

/// Gaussian weight `exp(-s^2 / 2) / sqrt(2 pi)`.
pub fn shadow_prior_value(s_grey: f64) -> f64 {
    (-0.5 * s_grey * s_grey).exp() / (2.0 * PI).sqrt()
}

/// Shadow prior map `W`, values in `(0, 1/sqrt(2 pi)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowPrior(Plane);

impl ShadowPrior {
    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }

    pub fn from_plane(p: Plane) -> Result<Self> {
        if p.channels() != 1 {
            return Err(Error::shape("shadow_prior", format!("expected 1 channel, got {}", p.channels())));
        }
        Ok(Self(p))
    }
}

pub fn shadow_prior(s_grey: &Plane) -> ShadowPrior {
    ShadowPrior(s_grey.map(|s| shadow_prior_value(s as f64) as f32))
}

/// Valid depth closer than `sky_threshold`. An empty result is an error.
pub fn valid_mask(depth: &DepthMap, sky_threshold: f32) -> Result<Mask> {
    let data: Vec<bool> = depth
        .values
        .iter()
        .zip(depth.valid.data())
        .map(|(&d, &ok)| ok && d < sky_threshold)
        .collect();
    let mask = Mask::new(depth.width, depth.height, data)?;
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}
