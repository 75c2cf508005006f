//! `H x W x C` float rasters, validity masks and their file formats.
//!
//! FPM layout (little endian): magic `FPM1`, u32 width, u32 height,
//! u32 channels, then f32 samples in row-major, channel-interleaved order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const FPM_MAGIC: &[u8; 4] = b"FPM1";

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "plane",
                format!(
                    "{width}x{height}x{channels} needs {} samples, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![v; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Samples of pixel `p` (flat index `y * width + x`).
    #[inline]
    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_size(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same(&self, other: &Plane, op: &'static str) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.channels != other.channels {
            return Err(Error::shape(
                op,
                format!(
                    "{}x{}x{} vs {}x{}x{}",
                    self.width, self.height, self.channels, other.width, other.height, other.channels
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_size(&self, other: &Plane, op: &'static str) -> Result<()> {
        if !self.same_size(other) {
            return Err(Error::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        Ok(())
    }

    /// Per-pixel channel mean as a 1-channel plane.
    pub fn grey(&self) -> Plane {
        let c = self.channels as f32;
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f32>() / c)
            .collect();
        Plane {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(FPM_MAGIC);
        for d in [self.width, self.height, self.channels] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], what: &str) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::corrupt(what, "shorter than FPM header"));
        }
        if &bytes[..4] != FPM_MAGIC {
            return Err(Error::corrupt(what, format!("bad magic {:?}", &bytes[..4])));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (w, h, c) = (dim(0), dim(1), dim(2));
        let n = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::corrupt(what, "dimensions overflow"))?;
        if bytes.len() - 16 != n * 4 {
            return Err(Error::corrupt(
                what,
                format!("{w}x{h}x{c} needs {} payload bytes, found {}", n * 4, bytes.len() - 16),
            ));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Plane::new(w, h, c, data)
    }

    pub fn write_fpm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_fpm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Reads an 8-bit PNG as `[0,1]` floats; gray/alpha inputs are converted to RGB.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let (w, h, bytes) = read_png_rgb8(path)?;
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Plane::new(w, h, 3, data)
    }

    /// Reads an FPM or PNG depending on the extension.
    pub fn read_any(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => Self::read_png(path),
            _ => Self::read_fpm(path),
        }
    }

    /// 8-bit preview: samples scaled by 255 and clamped, no gamma.
    pub fn write_preview(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let q = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let mut rgb = Vec::with_capacity(self.pixels() * 3);
        for px in self.data.chunks(self.channels) {
            match self.channels {
                1 => rgb.extend_from_slice(&[q(px[0]); 3]),
                2 => rgb.extend_from_slice(&[q(px[0]), q(px[1]), 0]),
                _ => rgb.extend(px[..3].iter().map(|&v| q(v))),
            }
        }
        image::save_buffer(
            path,
            &rgb,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::corrupt(path.display().to_string(), e.to_string()))
    }

    /// Stacks same-sized planes into an `[N,C,H,W]` tensor.
    pub fn stack<T: Real>(planes: &[&Plane]) -> Result<Tensor<T>> {
        let first = planes
            .first()
            .ok_or_else(|| Error::shape("stack", "no planes"))?;
        let (w, h, c) = (first.width, first.height, first.channels);
        let mut data = Vec::with_capacity(planes.len() * w * h * c);
        for p in planes {
            p.check_same(first, "stack")?;
            for ch in 0..c {
                data.extend(p.data[ch..].iter().step_by(c).map(|&v| T::lit(v as f64)));
            }
        }
        Tensor::new(vec![planes.len(), c, h, w], data)
    }

    /// Splits an `[N,C,H,W]` tensor back into planes.
    pub fn unstack<T: Real>(t: &Tensor<T>) -> Result<Vec<Plane>> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::shape("unstack", format!("expected NCHW, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let d = t.data();
        Ok((0..n)
            .map(|i| {
                Plane::from_fn(w, h, c, |x, y, ch| {
                    d[(i * c + ch) * hw + y * w + x].to_f64().unwrap() as f32
                })
            })
            .collect())
    }
}

/// Reads any 8-bit PNG as packed RGB bytes `(width, height, bytes)`.
pub fn read_png_rgb8(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| Error::corrupt(path.display().to_string(), e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

/// Per-pixel validity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("mask", format!("{width}x{height} vs {} entries", data.len())));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Number of valid pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Any nonzero sample of the first channel is valid.
    pub fn from_plane(p: &Plane) -> Mask {
        Mask {
            width: p.width,
            height: p.height,
            data: p.data.chunks(p.channels).map(|px| px[0] != 0.0).collect(),
        }
    }

    pub fn check_plane(&self, p: &Plane, op: &'static str) -> Result<()> {
        if p.width != self.width || p.height != self.height {
            return Err(Error::shape(
                op,
                format!("mask {}x{} vs plane {}x{}", self.width, self.height, p.width, p.height),
            ));
        }
        Ok(())
    }
}
