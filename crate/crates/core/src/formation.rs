//! Forward image formation `I = A * S_d * S_i + eps`, the analytic diffuse
//! shading it generalizes, and cross rendering with exchanged light codes.

use crate::error::{Error, Result};
use crate::network::{DeRenderNet, LightCode};
use crate::plane::Plane;
use crate::preprocess::{DepthMap, NormalMap};

/// Output of a decomposition: albedo (3 ch), shape-dependent shading (3 ch),
/// shape-independent shading (1 ch, broadcast over colour) and the light code.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicSet {
    pub albedo: Plane,
    pub s_d: Plane,
    pub s_i: Plane,
    pub light: LightCode,
}

impl IntrinsicSet {
    pub fn new(albedo: Plane, s_d: Plane, s_i: Plane, light: LightCode) -> Result<Self> {
        check_triplet(&albedo, &s_d, &s_i)?;
        Ok(Self {
            albedo,
            s_d,
            s_i,
            light,
        })
    }
}

fn check_triplet(a: &Plane, s_d: &Plane, s_i: &Plane) -> Result<()> {
    a.check_same(s_d, "compose")?;
    a.check_size(s_i, "compose")?;
    if s_i.channels() != 1 {
        return Err(Error::shape(
            "compose",
            format!("shape-independent shading must have 1 channel, got {}", s_i.channels()),
        ));
    }
    Ok(())
}

/// Directional light: unit direction toward the light scaled by intensity, and an RGB tint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightSample {
    pub direction_intensity: [f32; 3],
    pub color: [f32; 3],
}

impl LightSample {
    pub fn white(direction_intensity: [f32; 3]) -> Self {
        Self {
            direction_intensity,
            color: [1.0; 3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.direction_intensity.iter().chain(&self.color).all(|v| v.is_finite())
    }
}

/// `A * S_d * S_i (+ eps)` for raw planes; `s_i` has one channel.
pub fn compose_planes(albedo: &Plane, s_d: &Plane, s_i: &Plane, eps: Option<&Plane>) -> Result<Plane> {
    check_triplet(albedo, s_d, s_i)?;
    if let Some(e) = eps {
        albedo.check_same(e, "compose")?;
    }
    let c = albedo.channels();
    let mut out = albedo.clone();
    let si = s_i.data();
    for ((o, &sd), idx) in out.data_mut().iter_mut().zip(s_d.data()).zip(0..) {
        *o = *o * sd * si[idx / c];
    }
    if let Some(e) = eps {
        for (o, &ev) in out.data_mut().iter_mut().zip(e.data()) {
            *o += ev;
        }
    }
    Ok(out)
}

pub fn compose(set: &IntrinsicSet, eps: Option<&Plane>) -> Result<Plane> {
    compose_planes(&set.albedo, &set.s_d, &set.s_i, eps)
}

fn clamped_dot(n: [f32; 3], w: [f32; 3]) -> f32 {
    (n[0] * w[0] + n[1] * w[1] + n[2] * w[2]).max(0.0)
}

/// `sum_k max(n . w_k, 0)` as a 1-channel plane (light tints ignored).
pub fn diffuse_shading(normals: &NormalMap, lights: &[LightSample]) -> Plane {
    let data = normals
        .vectors()
        .iter()
        .map(|&n| lights.iter().map(|l| clamped_dot(n, l.direction_intensity)).sum())
        .collect();
    Plane::new(normals.width(), normals.height(), 1, data).expect("normal dims")
}

/// `sum_k max(n . w_k, 0) * color_k` as a 3-channel plane.
pub fn diffuse_shading_rgb(normals: &NormalMap, lights: &[LightSample]) -> Plane {
    let mut data = Vec::with_capacity(normals.vectors().len() * 3);
    for &n in normals.vectors() {
        let mut px = [0.0f32; 3];
        for l in lights {
            let s = clamped_dot(n, l.direction_intensity);
            for (p, c) in px.iter_mut().zip(l.color) {
                *p += s * c;
            }
        }
        data.extend_from_slice(&px);
    }
    Plane::new(normals.width(), normals.height(), 3, data).expect("normal dims")
}

/// Re-renders each scene's shape-dependent shading under the other scene's
/// light code: returns `(S_d(D1, L2), S_d(D2, L1))`.
pub fn cross_render(
    s1: &IntrinsicSet,
    s2: &IntrinsicSet,
    net: &DeRenderNet<f32>,
    d1: &DepthMap,
    d2: &DepthMap,
) -> Result<(Plane, Plane)> {
    if !net.is_trained() {
        return Err(Error::Untrained);
    }
    let mut out = net.render_shading(&[d1, d2], &[&s2.light, &s1.light])?;
    let b = out.pop().expect("two outputs");
    let a = out.pop().expect("two outputs");
    Ok((a, b))
}
