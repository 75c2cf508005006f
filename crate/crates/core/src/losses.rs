//! Training losses over valid-pixel masks. Each term averages a per-pixel
//! residual over the `M` valid pixels of the whole batch; colour residuals are
//! averaged over channels inside the pixel.

use crate::error::{Error, Result};
use crate::network::{LightCode, LIGHT_CHUNK};
use crate::plane::{Mask, Plane};
use crate::preprocess::{NormalMap, ShadowPrior};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub albedo: f64,
    pub shape_dependent: f64,
    pub shape_independent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            albedo: 0.8,
            shape_dependent: 0.5,
            shape_independent: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_a: f64,
    pub l_si: f64,
    pub l_sd: f64,
    pub l_recon: f64,
    pub total: f64,
    /// Valid pixels the terms were averaged over.
    pub m: usize,
}

/// Weighted sum of already computed parts.
pub fn total_loss(l_recon: f64, l_a: f64, l_sd: f64, l_si: f64, m: usize, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_a,
        l_si,
        l_sd,
        l_recon,
        total: l_recon + w.albedo * l_a + w.shape_dependent * l_sd + w.shape_independent * l_si,
        m,
    }
}

fn mask_count<T: Real>(mask: &Tensor<T>) -> usize {
    mask.data().iter().filter(|&&v| v != T::zero()).count()
}

/// `mean_valid(channel_mean((A - A*)^2))`.
pub fn albedo_loss_var<T: Real>(tape: &mut Tape<T>, a: Var, a_star: Var, mask: &Tensor<T>) -> Result<Var> {
    let d = tape.sub(a, a_star)?;
    let d = tape.square(d);
    let d = tape.channel_mean(d)?;
    tape.mean_masked(d, mask)
}

/// `mean_valid(w_i * sum_{j in N(i)} (S_i(i) - S_i(j))^2)` over 4-connected valid neighbours.
pub fn shape_independent_loss_var<T: Real>(tape: &mut Tape<T>, s_i: Var, w: Var, mask: &Tensor<T>) -> Result<Var> {
    let d = tape.neighbor_sq_diff(s_i, mask)?;
    let d = tape.mul(w, d)?;
    tape.mean_masked(d, mask)
}

/// Constant `[3, code_dim]` matrix summing the light triples of a code.
pub fn light_sum_matrix<T: Real>(code_dim: usize) -> Result<Tensor<T>> {
    if code_dim == 0 || code_dim % LIGHT_CHUNK != 0 {
        return Err(Error::shape(
            "shape_dependent_loss",
            format!("code_dim {code_dim} is not a positive multiple of 4"),
        ));
    }
    let mut p = Tensor::zeros(&[3, code_dim]);
    for m in 0..code_dim / LIGHT_CHUNK {
        for k in 0..3 {
            p.data_mut()[k * code_dim + m * LIGHT_CHUNK + k] = T::one();
        }
    }
    Ok(p)
}

/// Per-pixel `(mean_c S_d - n . sum_m l_m)^2 + (1 - w) * mean_c (A S_d - I)^2`,
/// averaged over valid pixels. `one_minus_w` is `1 - w` as a `[N,1,H,W]` constant.
#[allow(clippy::too_many_arguments)]
pub fn shape_dependent_loss_var<T: Real>(
    tape: &mut Tape<T>,
    s_d: Var,
    normals: Var,
    code: Var,
    a: Var,
    image: Var,
    one_minus_w: Var,
    mask: &Tensor<T>,
) -> Result<Var> {
    let cs = tape.shape(code).to_vec();
    if cs.len() != 2 {
        return Err(Error::shape("shape_dependent_loss", format!("light code shape {cs:?}")));
    }
    let p = tape.constant(light_sum_matrix(cs[1])?);
    let zero = tape.constant(Tensor::zeros(&[3]));
    let light = tape.dense(code, p, zero)?;
    let target = tape.pixel_dot(normals, light)?;
    let mean_sd = tape.channel_mean(s_d)?;
    let first = tape.sub(mean_sd, target)?;
    let first = tape.square(first);
    let recon = tape.mul(a, s_d)?;
    let recon = tape.sub(recon, image)?;
    let recon = tape.square(recon);
    let recon = tape.channel_mean(recon)?;
    let second = tape.mul(one_minus_w, recon)?;
    let sum = tape.add(first, second)?;
    tape.mean_masked(sum, mask)
}

/// `mean_valid(channel_mean((A S_d S_i - I)^2))`.
pub fn reconstruction_loss_var<T: Real>(
    tape: &mut Tape<T>,
    a: Var,
    s_d: Var,
    s_i: Var,
    image: Var,
    mask: &Tensor<T>,
) -> Result<Var> {
    let c = tape.shape(a).get(1).copied().unwrap_or(0);
    let si = tape.expand_channels(s_i, c)?;
    let r = tape.mul(a, s_d)?;
    let r = tape.mul(r, si)?;
    let r = tape.sub(r, image)?;
    let r = tape.square(r);
    let r = tape.channel_mean(r)?;
    tape.mean_masked(r, mask)
}

/// Constant supervision for a batch, all NCHW.
#[derive(Clone, Debug)]
pub struct Targets<T> {
    pub image: Tensor<T>,
    pub albedo: Tensor<T>,
    pub normals: Tensor<T>,
    pub prior: Tensor<T>,
    /// `[N,1,H,W]`, 1 at valid pixels.
    pub mask: Tensor<T>,
}

/// Graph nodes of the four terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub recon: Var,
    pub albedo: Var,
    pub shape_dependent: Var,
    pub shape_independent: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, tape: &Tape<T>, m: usize, w: &LossWeights) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item().to_f64().unwrap_or(f64::NAN);
        let mut b = total_loss(
            v(self.recon),
            v(self.albedo),
            v(self.shape_dependent),
            v(self.shape_independent),
            m,
            w,
        );
        b.total = v(self.total);
        b
    }
}

/// Builds the full objective from network outputs and batch targets.
#[allow(clippy::too_many_arguments)]
pub fn objective<T: Real>(
    tape: &mut Tape<T>,
    albedo: Var,
    s_i: Var,
    s_d: Var,
    code: Var,
    targets: &Targets<T>,
    w: &LossWeights,
) -> Result<LossVars> {
    let image = tape.constant(targets.image.clone());
    let a_star = tape.constant(targets.albedo.clone());
    let normals = tape.constant(targets.normals.clone());
    let prior = tape.constant(targets.prior.clone());
    let one_minus_w = tape.constant(targets.prior.map(|v| T::one() - v));
    let mask = &targets.mask;

    let recon = reconstruction_loss_var(tape, albedo, s_d, s_i, image, mask)?;
    let l_a = albedo_loss_var(tape, albedo, a_star, mask)?;
    let l_sd = shape_dependent_loss_var(tape, s_d, normals, code, albedo, image, one_minus_w, mask)?;
    let l_si = shape_independent_loss_var(tape, s_i, prior, mask)?;

    let t1 = tape.scale(l_a, T::lit(w.albedo));
    let t2 = tape.scale(l_sd, T::lit(w.shape_dependent));
    let t3 = tape.scale(l_si, T::lit(w.shape_independent));
    let total = tape.add(recon, t1)?;
    let total = tape.add(total, t2)?;
    let total = tape.add(total, t3)?;
    Ok(LossVars {
        recon,
        albedo: l_a,
        shape_dependent: l_sd,
        shape_independent: l_si,
        total,
    })
}

fn mask_tensor(mask: &Mask) -> Tensor<f64> {
    Tensor::from_fn(&[1, 1, mask.height(), mask.width()], |i| {
        if mask.data()[i] {
            1.0
        } else {
            0.0
        }
    })
}

fn plane_var(tape: &mut Tape<f64>, p: &Plane) -> Result<Var> {
    Ok(tape.constant(Plane::stack(&[p])?))
}

fn eval(tape: &Tape<f64>, v: Var) -> f64 {
    tape.value(v).item()
}

/// Albedo loss for single planes.
pub fn albedo_loss(a: &Plane, a_star: &Plane, mask: &Mask) -> Result<f64> {
    a.check_same(a_star, "albedo_loss")?;
    mask.check_plane(a, "albedo_loss")?;
    let mut tape = Tape::new();
    let (x, y) = (plane_var(&mut tape, a)?, plane_var(&mut tape, a_star)?);
    let l = albedo_loss_var(&mut tape, x, y, &mask_tensor(mask))?;
    Ok(eval(&tape, l))
}

pub fn shape_independent_loss(s_i: &Plane, w: &ShadowPrior, mask: &Mask) -> Result<f64> {
    s_i.check_same(w.plane(), "shape_independent_loss")?;
    mask.check_plane(s_i, "shape_independent_loss")?;
    let mut tape = Tape::new();
    let (x, wv) = (plane_var(&mut tape, s_i)?, plane_var(&mut tape, w.plane())?);
    let l = shape_independent_loss_var(&mut tape, x, wv, &mask_tensor(mask))?;
    Ok(eval(&tape, l))
}

#[allow(clippy::too_many_arguments)]
pub fn shape_dependent_loss(
    s_d: &Plane,
    normals: &NormalMap,
    light: &LightCode,
    a: &Plane,
    image: &Plane,
    w: &ShadowPrior,
    mask: &Mask,
) -> Result<f64> {
    const OP: &str = "shape_dependent_loss";
    s_d.check_same(a, OP)?;
    s_d.check_same(image, OP)?;
    let n = normals.to_plane();
    s_d.check_size(&n, OP)?;
    s_d.check_size(w.plane(), OP)?;
    mask.check_plane(s_d, OP)?;
    let mut tape = Tape::new();
    let sd = plane_var(&mut tape, s_d)?;
    let nv = plane_var(&mut tape, &n)?;
    let code = tape.constant(Tensor::new(
        vec![1, light.dim()],
        light.values().iter().map(|&v| v as f64).collect(),
    )?);
    let av = plane_var(&mut tape, a)?;
    let iv = plane_var(&mut tape, image)?;
    let omw = plane_var(&mut tape, &w.plane().map(|v| 1.0 - v))?;
    let l = shape_dependent_loss_var(&mut tape, sd, nv, code, av, iv, omw, &mask_tensor(mask))?;
    Ok(eval(&tape, l))
}

pub fn reconstruction_loss(a: &Plane, s_d: &Plane, s_i: &Plane, image: &Plane, mask: &Mask) -> Result<f64> {
    const OP: &str = "reconstruction_loss";
    a.check_same(s_d, OP)?;
    a.check_same(image, OP)?;
    a.check_size(s_i, OP)?;
    if s_i.channels() != 1 {
        return Err(Error::shape(OP, "shape-independent shading must have 1 channel"));
    }
    mask.check_plane(a, OP)?;
    let mut tape = Tape::new();
    let av = plane_var(&mut tape, a)?;
    let sd = plane_var(&mut tape, s_d)?;
    let si = plane_var(&mut tape, s_i)?;
    let iv = plane_var(&mut tape, image)?;
    let l = reconstruction_loss_var(&mut tape, av, sd, si, iv, &mask_tensor(mask))?;
    Ok(eval(&tape, l))
}

/// All four terms for one scene.
#[allow(clippy::too_many_arguments)]
pub fn loss_breakdown(
    a: &Plane,
    a_star: &Plane,
    s_d: &Plane,
    s_i: &Plane,
    light: &LightCode,
    normals: &NormalMap,
    image: &Plane,
    w: &ShadowPrior,
    mask: &Mask,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let m = mask_count(&mask_tensor(mask));
    Ok(total_loss(
        reconstruction_loss(a, s_d, s_i, image, mask)?,
        albedo_loss(a, a_star, mask)?,
        shape_dependent_loss(s_d, normals, light, a, image, w, mask)?,
        shape_independent_loss(s_i, w, mask)?,
        m,
        weights,
    ))
}
