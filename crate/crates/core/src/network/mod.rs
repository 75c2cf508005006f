//! The two-stage network: a decomposition module (image -> albedo,
//! shape-independent shading, light code) and a rendering module
//! (log depth + light code -> shape-dependent shading), plus training.

mod adam;
mod layers;
mod model;
mod train;

pub use adam::Adam;
pub use layers::Ctx;
pub use model::{DeRenderNet, DecomposeVars, Decomposition};
pub use train::{
    lr_for_epoch, prepare_sample, stack_batch, Batch, EpochLog, StepGradients, StepLosses, Trainer, TrainingSample,
};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Number of values per light chunk in the code; the first three form a light vector.
pub const LIGHT_CHUNK: usize = 4;

/// Latent lighting code. `B = len / 4` directional lights are read from it.
#[derive(Clone, Debug, PartialEq)]
pub struct LightCode {
    values: Vec<f32>,
}

impl LightCode {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.len() % LIGHT_CHUNK != 0 {
            return Err(Error::shape(
                "light code",
                format!("dimension {} is not a positive multiple of 4", values.len()),
            ));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn num_lights(&self) -> usize {
        self.values.len() / LIGHT_CHUNK
    }

    /// `l_m = values[4m .. 4m+3]` for every chunk.
    pub fn extract_lights(&self) -> Vec<[f32; 3]> {
        self.values
            .chunks_exact(LIGHT_CHUNK)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    /// The unused fourth element of every chunk.
    pub fn chunk_tails(&self) -> Vec<f32> {
        self.values.chunks_exact(LIGHT_CHUNK).map(|c| c[3]).collect()
    }

    /// `sum_m l_m`, so that `sum_m n . l_m = n . light_sum()`.
    pub fn light_sum(&self) -> [f64; 3] {
        let mut s = [0.0f64; 3];
        for l in self.extract_lights() {
            for (a, v) in s.iter_mut().zip(l) {
                *a += v as f64;
            }
        }
        s
    }

    /// Stored as a `dim x 1 x 1` plane.
    pub fn to_plane(&self) -> Plane {
        Plane::new(self.values.len(), 1, 1, self.values.clone()).expect("code dims")
    }

    pub fn from_plane(p: &Plane) -> Result<Self> {
        Self::new(p.data().to_vec())
    }
}

/// Extracts lights from a raw code slice (errors unless the length is a multiple of 4).
pub fn extract_lights(code: &[f32]) -> Result<Vec<[f32; 3]>> {
    Ok(LightCode::new(code.to_vec())?.extract_lights())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Multiplier on the base channel counts.
    pub width_scale: f64,
    pub input_h: usize,
    pub input_w: usize,
    pub code_dim: usize,
    pub seed: u64,
}

/// Stride-2 layers in the rendering encoder; input dims must divide by 2^this.
pub const RENDER_DOWNSAMPLES: u32 = 4;

impl Default for ModelConfig {
    /// Desk-scale configuration: 64x48 input, quarter width, 1024-d code.
    fn default() -> Self {
        Self {
            width_scale: 0.25,
            input_h: 48,
            input_w: 64,
            code_dim: 1024,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-size configuration (320x240 input, full width).
    pub fn full_size() -> Self {
        Self {
            width_scale: 1.0,
            input_h: 240,
            input_w: 320,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 1usize << RENDER_DOWNSAMPLES;
        if self.input_h == 0 || self.input_w == 0 || self.input_h % unit != 0 || self.input_w % unit != 0 {
            return Err(Error::Config(format!(
                "input {}x{} must be positive multiples of {unit}",
                self.input_w, self.input_h
            )));
        }
        if self.code_dim == 0 || self.code_dim % LIGHT_CHUNK != 0 {
            return Err(Error::Config(format!(
                "code_dim {} must be a positive multiple of 4",
                self.code_dim
            )));
        }
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::Config(format!("width_scale {} must be positive", self.width_scale)));
        }
        Ok(())
    }

    /// Base channel count scaled by `width_scale`, at least 1.
    pub fn channels(&self, base: usize) -> usize {
        ((base as f64 * self.width_scale).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    /// The learning rate halves after every this many epochs.
    pub halve_every: usize,
    /// Weight of the albedo loss.
    pub lambda_a: f64,
    /// Weight of the shape-dependent shading loss.
    pub lambda_sd: f64,
    /// Weight of the shape-independent shading loss.
    pub lambda_si: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults with the published schedule and loss weights.
    fn default() -> Self {
        Self {
            batch: 4,
            epochs: 20,
            lr: 5e-4,
            halve_every: 5,
            lambda_a: 0.8,
            lambda_sd: 0.5,
            lambda_si: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.halve_every == 0 {
            return Err(Error::Config("batch and halve_every must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if [self.lambda_a, self.lambda_sd, self.lambda_si].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}
