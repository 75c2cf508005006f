//! Procedural ground-truth scenes: a ground plane with axis-aligned boxes,
//! lit by directional lights with hard cast shadows, raycast from a pinhole
//! camera. Every scene satisfies `I = A * S_d * S_i` exactly.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formation::{compose_planes, LightSample};
use crate::plane::{Mask, Plane};
use crate::preprocess::{DepthMap, Intrinsics, NormalMap, DEFAULT_SKY_THRESHOLD};

/// Depth written for sky pixels; above the default sky threshold.
pub const SKY_DEPTH: f32 = 1000.0;
/// Ground hits farther than this (camera z) are rendered as sky.
pub const MAX_GROUND_DEPTH: f64 = 60.0;
const CAMERA_HEIGHT: f64 = 2.0;
const CAMERA_PITCH_DEG: f64 = 12.0;
const SKY_COLOR: [f32; 3] = [0.55, 0.7, 0.9];
const SHADOW_EPS: f64 = 1e-6;

pub const SURFACE_SKY: u32 = 0;
pub const SURFACE_GROUND: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    Checker,
    Flat,
    ValueNoise,
}

impl std::str::FromStr for TextureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(Self::Checker),
            "flat" => Ok(Self::Flat),
            "value-noise" => Ok(Self::ValueNoise),
            _ => Err(Error::Config(format!("unknown texture {s:?} (checker | flat | value-noise)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    /// Inclusive range of box counts.
    pub boxes: (usize, usize),
    pub texture: TextureKind,
    /// Keep albedo edges off the ground so shadow boundaries never meet them.
    pub decorrelated: bool,
    pub lights: usize,
    pub ambient: f32,
    /// Shadow attenuation per occluded light.
    pub s_min: f32,
    /// Fixed `(azimuth, elevation)` in degrees for every light instead of
    /// random directions. Azimuth 0 points at the camera.
    pub light_direction: Option<(f64, f64)>,
    pub seed: u64,
}

impl SceneSpec {
    /// 64x48 desk-scale scene with 1-3 boxes, one light and smooth textures.
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            intrinsics: Intrinsics::centered(width, height),
            boxes: (1, 3),
            texture: TextureKind::ValueNoise,
            decorrelated: true,
            lights: 1,
            ambient: 0.3,
            s_min: 0.3,
            light_direction: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("degenerate image size {}x{}", self.width, self.height)));
        }
        if self.boxes.0 > self.boxes.1 {
            return Err(Error::Config(format!("box range {:?} is empty", self.boxes)));
        }
        if !(1..=4).contains(&self.lights) {
            return Err(Error::Config(format!("light count {} outside 1..=4", self.lights)));
        }
        if !(self.s_min > 0.0 && self.s_min < 1.0) {
            return Err(Error::Config(format!("s_min {} outside (0, 1)", self.s_min)));
        }
        if !(self.ambient >= 0.0 && self.ambient.is_finite()) {
            return Err(Error::Config(format!("ambient {} must be non-negative", self.ambient)));
        }
        Ok(())
    }
}

/// Axis-aligned box in world coordinates (y up, ground at y = 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Entry distance and face index (axis * 2 + [0 = min side, 1 = max side])
    /// of the first intersection with `t > t_min`.
    pub fn intersect(&self, o: [f64; 3], d: [f64; 3], t_min: f64) -> Option<(f64, usize)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut face = 0;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut near, mut far) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            let mut near_face = a * 2;
            if near > far {
                std::mem::swap(&mut near, &mut far);
                near_face = a * 2 + 1;
            }
            if near > t0 {
                t0 = near;
                face = near_face;
            }
            t1 = t1.min(far);
        }
        (t0 <= t1 && t0 > t_min).then_some((t0, face))
    }

    /// True iff the ray `o + t d`, `t > 0`, passes through the box (an origin
    /// inside the box counts).
    pub fn blocks(&self, o: [f64; 3], d: [f64; 3]) -> bool {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (near, far) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            t0 = t0.max(near.min(far));
            t1 = t1.min(near.max(far));
        }
        t0 <= t1 && t1 > 0.0
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    fn face_normal(face: usize) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[face / 2] = if face % 2 == 0 { -1.0 } else { 1.0 };
        n
    }
}

/// Scene geometry shared by the renderer and the shadow oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub boxes: Vec<Aabb>,
    pub camera_height: f64,
    pub pitch: f64,
}

impl Geometry {
    /// Camera-to-world rotation (rows), pitched down about x.
    fn rotation(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.pitch.sin_cos();
        [[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]]
    }

    pub fn camera_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
    }

    pub fn world_to_camera(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn camera_origin(&self) -> [f64; 3] {
        [0.0, self.camera_height, 0.0]
    }

    /// Nearest hit along `o + t d`: `(t, surface id, world normal)`.
    pub fn trace(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, u32, [f64; 3])> {
        let mut best: Option<(f64, u32, [f64; 3])> = None;
        if d[1] < 0.0 {
            let t = -o[1] / d[1];
            if t > 0.0 {
                best = Some((t, SURFACE_GROUND, [0.0, 1.0, 0.0]));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some((t, face)) = b.intersect(o, d, 0.0) {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, 2 + (i * 6 + face) as u32, Aabb::face_normal(face)));
                }
            }
        }
        best
    }
}

/// True iff the segment from `point` toward the light (direction `to_light`,
/// world frame) is blocked by a box.
pub fn shadow_oracle(geometry: &Geometry, point: [f64; 3], normal: [f64; 3], to_light: [f64; 3]) -> bool {
    if dot(normal, to_light) <= 0.0 {
        // the surface faces away; it receives no direct light to occlude
        return false;
    }
    let o = add(point, scale(normal, SHADOW_EPS));
    geometry.boxes.iter().any(|b| b.blocks(o, to_light))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Plane,
    pub albedo: Plane,
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub s_d: Plane,
    pub s_i: Plane,
    pub mask: Mask,
    /// Directions toward the lights in the camera frame, scaled by intensity.
    pub lights: Vec<LightSample>,
    /// Per-pixel surface id: 0 sky, 1 ground, then six per box.
    pub surface: Vec<u32>,
    pub intrinsics: Intrinsics,
    pub geometry: Geometry,
    pub seed: u64,
}

impl Scene {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Valid pixels whose 8 neighbours lie on the same surface.
    pub fn interior(&self) -> Mask {
        let (w, h) = (self.width(), self.height());
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let id = self.surface[i];
                id != SURFACE_SKY
                    && self.mask.data()[i]
                    && x > 0
                    && y > 0
                    && x + 1 < w
                    && y + 1 < h
                    && (0..9).all(|k| {
                        let (nx, ny) = (x + k % 3 - 1, y + k / 3 - 1);
                        self.surface[ny * w + nx] == id && self.mask.data()[ny * w + nx]
                    })
            })
            .collect();
        Mask::new(w, h, data).expect("dims")
    }

    /// Pixels within `radius` of a change in ground-truth `S_i`.
    pub fn shadow_boundary(&self, radius: usize) -> Mask {
        let (w, h) = (self.width(), self.height());
        let si = self.s_i.data();
        let mut edge = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w && si[i] != si[i + 1] {
                    edge[i] = true;
                    edge[i + 1] = true;
                }
                if y + 1 < h && si[i] != si[i + w] {
                    edge[i] = true;
                    edge[i + w] = true;
                }
            }
        }
        dilate(&edge, w, h, radius)
    }
}

/// Binary dilation with a square structuring element.
pub fn dilate(m: &[bool], w: usize, h: usize, radius: usize) -> Mask {
    let r = radius as isize;
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize && m[ny as usize * w + nx as usize]
                })
            })
        })
        .collect();
    Mask::new(w, h, data).expect("dims")
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1F1F_1F1F) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]` with unit lattice spacing.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = lattice(seed, ix, iy) * (1.0 - sx) + lattice(seed, ix + 1, iy) * sx;
    let b = lattice(seed, ix, iy + 1) * (1.0 - sx) + lattice(seed, ix + 1, iy + 1) * sx;
    a * (1.0 - sy) + b * sy
}

#[derive(Clone, Debug)]
struct Material {
    base: [f32; 3],
    alt: [f32; 3],
    noise_seed: u64,
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)]
}

impl Material {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            base: random_color(rng),
            alt: random_color(rng),
            noise_seed: rng.gen(),
        }
    }

    /// Albedo at surface coordinates `(s, t)` in world units.
    fn albedo(&self, kind: TextureKind, s: f64, t: f64) -> [f32; 3] {
        match kind {
            TextureKind::Flat => self.base,
            TextureKind::Checker => {
                let cell = ((s / 0.5).floor() + (t / 0.5).floor()) as i64;
                if cell.rem_euclid(2) == 0 {
                    self.base
                } else {
                    self.alt
                }
            }
            TextureKind::ValueNoise => {
                let k = value_noise(self.noise_seed, s * 0.6, t * 0.6) as f32;
                [0, 1, 2].map(|c| self.base[c] * (1.0 - k) + self.alt[c] * k)
            }
        }
    }
}

/// Surface coordinates of a world point on a given surface, for texturing.
fn surface_coords(surface: u32, p: [f64; 3]) -> (f64, f64) {
    if surface == SURFACE_GROUND {
        return (p[0], p[2]);
    }
    match ((surface - 2) % 6) / 2 {
        0 => (p[2], p[1]),
        1 => (p[0], p[2]),
        _ => (p[0], p[1]),
    }
}

fn random_geometry(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Geometry {
    let count = rng.gen_range(spec.boxes.0..=spec.boxes.1);
    let boxes = (0..count)
        .map(|_| {
            let (cx, cz) = (rng.gen_range(-1.6..1.6), rng.gen_range(-7.5..-4.0));
            let (hx, hz) = (rng.gen_range(0.3..0.8), rng.gen_range(0.3..0.8));
            let height = rng.gen_range(0.5..1.5);
            Aabb {
                min: [cx - hx, 0.0, cz - hz],
                max: [cx + hx, height, cz + hz],
            }
        })
        .collect();
    Geometry {
        boxes,
        camera_height: CAMERA_HEIGHT,
        pitch: CAMERA_PITCH_DEG.to_radians(),
    }
}

/// World-frame directional lights: direction toward the light times intensity.
fn random_lights(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<([f64; 3], [f32; 3])> {
    (0..spec.lights)
        .map(|_| {
            // from behind or beside the boxes so shadows fall into view
            let (mut elevation, mut azimuth) = (rng.gen_range(30f64..55.0), rng.gen_range(100f64..260.0));
            if let Some((az, el)) = spec.light_direction {
                (azimuth, elevation) = (az, el);
            }
            let (elevation, azimuth) = (elevation.to_radians(), azimuth.to_radians());
            let intensity = rng.gen_range(1.5..2.0) / spec.lights as f64;
            let dir = [
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
                elevation.cos() * azimuth.cos(),
            ];
            let tint = [0, 1, 2].map(|_| rng.gen_range(0.9f32..1.0));
            let peak = tint.iter().cloned().fold(0.0, f32::max);
            (scale(dir, intensity), tint.map(|t| t / peak))
        })
        .collect()
}

/// Renders one scene. Deterministic in `spec` (including its seed).
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geometry = random_geometry(spec, &mut rng);
    let lights = random_lights(spec, &mut rng);
    let ground = Material::random(&mut rng);
    let box_materials: Vec<Material> = geometry.boxes.iter().map(|_| Material::random(&mut rng)).collect();

    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let mut albedo = Vec::with_capacity(n * 3);
    let mut s_d = Vec::with_capacity(n * 3);
    let mut s_i = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut surface = Vec::with_capacity(n);
    let origin = geometry.camera_origin();
    for v in 0..h {
        for u in 0..w {
            let ray = spec.intrinsics.ray(u as f64, v as f64);
            let dir = geometry.camera_to_world(ray);
            let hit = geometry
                .trace(origin, dir)
                .filter(|&(t, id, _)| id != SURFACE_GROUND || t <= MAX_GROUND_DEPTH);
            let Some((t, id, nw)) = hit else {
                albedo.extend_from_slice(&SKY_COLOR);
                s_d.extend_from_slice(&[1.0; 3]);
                s_i.push(1.0);
                depth.push(SKY_DEPTH);
                normals.push([0.0, 0.0, 1.0]);
                surface.push(SURFACE_SKY);
                continue;
            };
            let p = add(origin, scale(dir, t));
            let (s, tc) = surface_coords(id, p);
            let kind = if id == SURFACE_GROUND || !spec.decorrelated {
                spec.texture
            } else {
                // boxes are uniformly coloured so their silhouettes are the
                // only albedo edges, away from shadows cast on the ground
                TextureKind::Flat
            };
            let kind = if id == SURFACE_GROUND && spec.decorrelated && kind == TextureKind::Checker {
                TextureKind::ValueNoise
            } else {
                kind
            };
            let material = if id == SURFACE_GROUND {
                &ground
            } else {
                &box_materials[((id - 2) / 6) as usize]
            };
            albedo.extend_from_slice(&material.albedo(kind, s, tc));
            let mut shade = [spec.ambient; 3];
            let mut atten = 1.0f32;
            for (wl, color) in &lights {
                let lambert = dot(nw, *wl).max(0.0) as f32;
                for c in 0..3 {
                    shade[c] += lambert * color[c];
                }
                let norm = dot(*wl, *wl).sqrt();
                if shadow_oracle(&geometry, p, nw, scale(*wl, 1.0 / norm)) {
                    atten *= spec.s_min;
                }
            }
            s_d.extend_from_slice(&shade);
            s_i.push(atten);
            depth.push(t as f32);
            let nc = geometry.world_to_camera(nw);
            normals.push([nc[0] as f32, nc[1] as f32, nc[2] as f32]);
            surface.push(id);
        }
    }

    let albedo = Plane::new(w, h, 3, albedo)?;
    let s_d = Plane::new(w, h, 3, s_d)?;
    let s_i = Plane::new(w, h, 1, s_i)?;
    let image = compose_planes(&albedo, &s_d, &s_i, None)?;
    let depth = DepthMap::from_values(w, h, depth)?;
    let mask = Mask::new(
        w,
        h,
        depth.values().iter().map(|&d| d < DEFAULT_SKY_THRESHOLD).collect(),
    )?;
    let lights = lights
        .iter()
        .map(|(wl, color)| {
            let c = geometry.world_to_camera(*wl);
            LightSample {
                direction_intensity: [c[0] as f32, c[1] as f32, c[2] as f32],
                color: *color,
            }
        })
        .collect();
    Ok(Scene {
        image,
        albedo,
        depth,
        normals: NormalMap::new(w, h, normals)?,
        s_d,
        s_i,
        mask,
        lights,
        surface,
        intrinsics: spec.intrinsics,
        geometry,
        seed: spec.seed,
    })
}

/// Seeds for `n` scenes derived from one corpus seed.
pub fn scene_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| splitmix(seed.wrapping_mul(0x1000_0000_01B3) ^ i)).collect()
}

/// `n` scenes sharing `base` except for their seeds.
pub fn generate_corpus(base: &SceneSpec, n: usize) -> Result<Vec<Scene>> {
    scene_seeds(base.seed, n)
        .into_iter()
        .map(|seed| generate(&SceneSpec { seed, ..base.clone() }))
        .collect()
}

/// Analytic depth and normals of a sphere filling part of the view; pixels
/// off the sphere are marked invalid (zero depth).
pub fn sphere_depth(
    width: usize,
    height: usize,
    k: &Intrinsics,
    center: [f64; 3],
    radius: f64,
) -> Result<(DepthMap, NormalMap)> {
    let mut depth = Vec::with_capacity(width * height);
    let mut normals = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let d = k.ray(u as f64, v as f64);
            // |t d - c|^2 = r^2
            let a = dot(d, d);
            let b = -2.0 * dot(d, center);
            let c = dot(center, center) - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                depth.push(0.0);
                normals.push([0.0, 0.0, 1.0]);
                continue;
            }
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let p = scale(d, t);
            let nv = scale(add(p, scale(center, -1.0)), 1.0 / radius);
            depth.push(t as f32);
            normals.push([nv[0] as f32, nv[1] as f32, nv[2] as f32]);
        }
    }
    Ok((DepthMap::from_values(width, height, depth)?, NormalMap::new(width, height, normals)?))
}

const PLANE_FILES: [&str; 8] = ["image", "albedo", "depth", "normals", "s_d", "s_i", "mask", "surface"];

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// `[f, cx, cy]`.
    pub intrinsics: [f64; 3],
    /// Camera-frame `[dx, dy, dz, r, g, b]` per light.
    pub lights: Vec<[f32; 6]>,
    pub geometry: Geometry,
    /// Plane name to path relative to the corpus directory.
    pub files: std::collections::BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.jsonl";

/// Writes each scene as FPM planes in its own directory plus a line-delimited manifest.
pub fn export_corpus(scenes: &[Scene], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in scenes.iter().enumerate() {
        let id = format!("scene_{i:04}");
        let sub = dir.join(&id);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let surface = Plane::new(
            s.width(),
            s.height(),
            1,
            s.surface.iter().map(|&v| v as f32).collect(),
        )?;
        let planes = [
            s.image.clone(),
            s.albedo.clone(),
            s.depth.to_plane(),
            s.normals.to_plane(),
            s.s_d.clone(),
            s.s_i.clone(),
            s.mask.to_plane(),
            surface,
        ];
        let mut files = std::collections::BTreeMap::new();
        for (name, plane) in PLANE_FILES.iter().zip(&planes) {
            let rel = format!("{id}/{name}.fpm");
            plane.write_fpm(dir.join(&rel))?;
            files.insert(name.to_string(), rel);
        }
        let entry = ManifestEntry {
            id,
            seed: s.seed,
            width: s.width(),
            height: s.height(),
            intrinsics: [s.intrinsics.f, s.intrinsics.cx, s.intrinsics.cy],
            lights: s
                .lights
                .iter()
                .map(|l| {
                    let (d, c) = (l.direction_intensity, l.color);
                    [d[0], d[1], d[2], c[0], c[1], c[2]]
                })
                .collect(),
            geometry: s.geometry.clone(),
            files,
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| Error::io(&path, e))
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}

/// Reads a corpus written by [`export_corpus`]. Missing or corrupt files are
/// reported with their path.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let dir = dir.as_ref();
    let path = manifest_path(dir);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut scenes = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(path.display().to_string(), format!("line {}: {e}", lineno + 1)))?;
        scenes.push(load_entry(dir, &entry)?);
    }
    Ok(scenes)
}

fn load_entry(dir: &Path, e: &ManifestEntry) -> Result<Scene> {
    let read = |name: &str, channels: usize| -> Result<Plane> {
        let rel = e
            .files
            .get(name)
            .ok_or_else(|| Error::corrupt(format!("manifest entry {}", e.id), format!("no {name} file")))?;
        let path = dir.join(rel);
        let p = Plane::read_fpm(&path)?;
        if p.width() != e.width || p.height() != e.height || p.channels() != channels {
            return Err(Error::corrupt(
                path.display().to_string(),
                format!(
                    "{}x{}x{} plane, manifest says {}x{}x{channels}",
                    p.width(),
                    p.height(),
                    p.channels(),
                    e.width,
                    e.height
                ),
            ));
        }
        Ok(p)
    };
    let surface = read("surface", 1)?.data().iter().map(|&v| v as u32).collect();
    let [f, cx, cy] = e.intrinsics;
    Ok(Scene {
        image: read("image", 3)?,
        albedo: read("albedo", 3)?,
        depth: DepthMap::from_plane(&read("depth", 1)?)?,
        normals: NormalMap::from_plane(&read("normals", 3)?)?,
        s_d: read("s_d", 3)?,
        s_i: read("s_i", 1)?,
        mask: Mask::from_plane(&read("mask", 1)?),
        lights: e
            .lights
            .iter()
            .map(|l| LightSample {
                direction_intensity: [l[0], l[1], l[2]],
                color: [l[3], l[4], l[5]],
            })
            .collect(),
        surface,
        intrinsics: Intrinsics::new(f, cx, cy)?,
        geometry: e.geometry.clone(),
        seed: e.seed,
    })
}
