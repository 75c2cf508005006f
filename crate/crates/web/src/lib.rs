//! Browser demo: generate a synthetic scene, move its light and look at the
//! intrinsic layers and the preprocessing outputs. Everything runs locally
//! in WebAssembly; the page draws the RGBA buffers returned here.

use derender::preprocess::{depth_to_normal, pseudo_shading, shadow_prior};
use derender::synth::{generate, Scene, SceneSpec};
use derender::{Plane, Result};
use wasm_bindgen::prelude::*;

/// Layers the page can ask for.
pub const LAYERS: [&str; 7] = ["image", "albedo", "s_d", "s_i", "depth", "normals", "prior"];

/// A generated scene plus the light it is currently lit by.
pub struct SceneState {
    spec: SceneSpec,
    scene: Scene,
}

impl SceneState {
    pub fn new(seed: u64, width: usize, height: usize) -> Result<Self> {
        let spec = SceneSpec::new(width, height, seed);
        let scene = generate(&spec)?;
        Ok(Self { spec, scene })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Same boxes and materials under one light at `azimuth`, `elevation` degrees.
    pub fn relight(&mut self, azimuth: f64, elevation: f64) -> Result<()> {
        self.spec.light_direction = Some((azimuth, elevation.clamp(1.0, 89.0)));
        self.scene = generate(&self.spec)?;
        Ok(())
    }

    /// Layer as a displayable plane, or `None` for an unknown name.
    pub fn layer(&self, name: &str) -> Result<Option<Plane>> {
        let s = &self.scene;
        Ok(Some(match name {
            "image" => s.image.clone(),
            "albedo" => s.albedo.clone(),
            "s_d" => s.s_d.map(|v| v / 2.0),
            "s_i" => s.s_i.clone(),
            "depth" => {
                // near is bright; sky stays black
                let valid = s.mask.data();
                let far = s
                    .depth
                    .values()
                    .iter()
                    .zip(valid)
                    .filter(|(_, &ok)| ok)
                    .map(|(&d, _)| d)
                    .fold(1e-6f32, f32::max);
                let data = s
                    .depth
                    .values()
                    .iter()
                    .zip(valid)
                    .map(|(&d, &ok)| if ok { 1.0 - d / far } else { 0.0 })
                    .collect();
                Plane::new(s.width(), s.height(), 1, data)?
            }
            "normals" => depth_to_normal(&s.depth, &s.intrinsics)
                .to_plane()
                .map(|v| (v + 1.0) / 2.0),
            "prior" => shadow_prior(&pseudo_shading(&s.image, &s.albedo)?)
                .plane()
                .map(|v| v / 0.398_942_3),
            _ => return Ok(None),
        }))
    }
}

/// Interleaved RGBA8 with the same clamping as the CLI previews.
pub fn rgba(p: &Plane) -> Vec<u8> {
    let q = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let mut out = Vec::with_capacity(p.pixels() * 4);
    for px in p.data().chunks(p.channels()) {
        match px {
            [g] => out.extend_from_slice(&[q(*g), q(*g), q(*g), 255]),
            [r, g, b, ..] => out.extend_from_slice(&[q(*r), q(*g), q(*b), 255]),
            [r, g] => out.extend_from_slice(&[q(*r), q(*g), 0, 255]),
            [] => {}
        }
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    state: SceneState,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, width: u32, height: u32) -> std::result::Result<Demo, JsError> {
        let state = SceneState::new(seed as u64, width as usize, height as usize)
            .map_err(|e| JsError::new(&e.to_string()))?;
        Ok(Demo { state })
    }

    pub fn width(&self) -> u32 {
        self.state.scene().width() as u32
    }

    pub fn height(&self) -> u32 {
        self.state.scene().height() as u32
    }

    pub fn relight(&mut self, azimuth: f64, elevation: f64) -> std::result::Result<(), JsError> {
        self.state
            .relight(azimuth, elevation)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// RGBA bytes of `image`, `albedo`, `s_d`, `s_i`, `depth`, `normals` or `prior`.
    pub fn layer(&self, name: &str) -> std::result::Result<Vec<u8>, JsError> {
        match self.state.layer(name) {
            Ok(Some(p)) => Ok(rgba(&p)),
            Ok(None) => Err(JsError::new(&format!("unknown layer {name}"))),
            Err(e) => Err(JsError::new(&e.to_string())),
        }
    }

    /// Fraction of ground-truth pixels in cast shadow.
    pub fn shadow_fraction(&self) -> f64 {
        let s = self.state.scene();
        let n = s.mask.count().max(1);
        let shadowed = s
            .s_i
            .data()
            .iter()
            .zip(s.mask.data())
            .filter(|(&v, &ok)| ok && v < 1.0)
            .count();
        shadowed as f64 / n as f64
    }
}
