use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, ConvBnRelu, Ctx, Dense, ResBlock};
use super::{LightCode, ModelConfig, LIGHT_CHUNK, RENDER_DOWNSAMPLES};
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::preprocess::DepthMap;
use crate::tensor::{read_checkpoint, write_checkpoint, ParamId, ParamStore, Real, Tape, Tensor, Var};

const RES_BLOCKS: usize = 4;
const LIGHT_ENCODER: [usize; 5] = [64, 128, 256, 512, 512];
const RENDER_ENCODER: [usize; 8] = [32, 32, 64, 64, 128, 128, 256, 256];
const SHAPE_FEATURE: usize = 512;
/// Initial bias of the shadow head: sigmoid(2) ~ 0.88, i.e. mostly unshadowed.
const SHADOW_HEAD_BIAS: f64 = 2.0;

pub(crate) const META_MODEL: &str = "meta.model";
pub(crate) const META_TRAINED: &str = "meta.trained";

fn ceil_half(v: usize) -> usize {
    v.div_ceil(2)
}

#[derive(Clone, Debug)]
struct Decomposer {
    shared: [ConvBnRelu; 2],
    albedo_blocks: Vec<ResBlock>,
    albedo_head: Conv,
    shadow_blocks: Vec<ResBlock>,
    shadow_head: Conv,
    light_encoder: Vec<ConvBnRelu>,
    light_fc: Dense,
}

#[derive(Clone, Debug)]
struct Renderer {
    encoder: Vec<ConvBnRelu>,
    encoder_fc: Dense,
    decoder_fc: Dense,
    seed_shape: [usize; 3],
    /// (pre-skip conv, post-skip conv, encoder layer providing the skip)
    stages: Vec<(ConvBnRelu, ConvBnRelu, usize)>,
    last: ConvBnRelu,
    head: Conv,
}

/// Graph handles produced by the decomposition module.
#[derive(Clone, Copy, Debug)]
pub struct DecomposeVars {
    /// `[N,3,H,W]`, in `(0,1)`.
    pub albedo: Var,
    /// `[N,1,H,W]`, in `(0,1)`.
    pub s_i: Var,
    /// `[N,code_dim]`.
    pub code: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub albedo: Plane,
    pub s_i: Plane,
    pub light: LightCode,
}

/// Two-stage network with its parameters.
#[derive(Clone, Debug)]
pub struct DeRenderNet<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    decomposer: Decomposer,
    renderer: Renderer,
    trained: bool,
}

impl<T: Real> DeRenderNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = |b| config.channels(b);
        let rng = &mut rng;
        let s = &mut store;

        let feat = c(64);
        let shared = [
            ConvBnRelu::new(s, rng, "dec.shared0", 3, c(32), 1),
            ConvBnRelu::new(s, rng, "dec.shared1", c(32), feat, 1),
        ];
        let albedo_blocks = (0..RES_BLOCKS)
            .map(|i| ResBlock::new(s, rng, &format!("dec.albedo.res{i}"), feat))
            .collect();
        let albedo_head = Conv::new(s, rng, "dec.albedo.head", feat, 3, 1, 1.0);
        let shadow_blocks = (0..RES_BLOCKS)
            .map(|i| ResBlock::new(s, rng, &format!("dec.shadow.res{i}"), feat))
            .collect();
        let shadow_head =
            Conv::new(s, rng, "dec.shadow.head", feat, 1, 1, 1.0).with_bias(s, SHADOW_HEAD_BIAS);
        let mut light_encoder = Vec::new();
        let (mut cin, mut h, mut w) = (feat, config.input_h, config.input_w);
        for (i, &base) in LIGHT_ENCODER.iter().enumerate() {
            light_encoder.push(ConvBnRelu::new(s, rng, &format!("dec.light.enc{i}"), cin, c(base), 2));
            cin = c(base);
            h = ceil_half(h);
            w = ceil_half(w);
        }
        let light_fc = Dense::new(s, rng, "dec.light.fc", cin * h * w, config.code_dim, 1.0);
        let decomposer = Decomposer {
            shared,
            albedo_blocks,
            albedo_head,
            shadow_blocks,
            shadow_head,
            light_encoder,
            light_fc,
        };

        let mut encoder = Vec::new();
        let mut cin = 1;
        for (i, &base) in RENDER_ENCODER.iter().enumerate() {
            let stride = if i % 2 == 1 { 2 } else { 1 };
            encoder.push(ConvBnRelu::new(s, rng, &format!("ren.enc{i}"), cin, c(base), stride));
            cin = c(base);
        }
        let down = 1usize << RENDER_DOWNSAMPLES;
        let (sh, sw) = (config.input_h / down, config.input_w / down);
        let seed_c = c(RENDER_ENCODER[7]);
        let flat = seed_c * sh * sw;
        let encoder_fc = Dense::new(s, rng, "ren.enc_fc", flat, c(SHAPE_FEATURE), std::f64::consts::SQRT_2);
        let decoder_fc = Dense::new(
            s,
            rng,
            "ren.dec_fc",
            c(SHAPE_FEATURE) + config.code_dim,
            flat,
            std::f64::consts::SQRT_2,
        );
        // three upsampling stages with skips from the stride-1 encoder layers
        // at matching resolution, then a final full-resolution stage
        let mut stages = Vec::new();
        let mut cur = seed_c;
        for (k, (skip_layer, out_base)) in [(6usize, 128usize), (4, 64), (2, 32)].into_iter().enumerate() {
            let pre = ConvBnRelu::new(s, rng, &format!("ren.dec{}", 2 * k), cur, c(out_base), 1);
            let skip_c = c(RENDER_ENCODER[skip_layer]);
            let post = ConvBnRelu::new(
                s,
                rng,
                &format!("ren.dec{}", 2 * k + 1),
                c(out_base) + skip_c,
                c(out_base),
                1,
            );
            stages.push((pre, post, skip_layer));
            cur = c(out_base);
        }
        let last = ConvBnRelu::new(s, rng, "ren.dec6", cur, c(32), 1);
        // zero head: constant softplus(bias) = 1 shading before training
        let head = Conv::new(s, rng, "ren.head", c(32), 3, 1, 0.0).with_bias(s, (1f64.exp() - 1.0).ln());
        let renderer = Renderer {
            encoder,
            encoder_fc,
            decoder_fc,
            seed_shape: [seed_c, sh, sw],
            stages,
            last,
            head,
        };

        Ok(Self {
            config,
            store,
            decomposer,
            renderer,
            trained: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Trainable scalar count.
    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) -> Result<()> {
        for (id, t) in updates {
            self.store.set(id, t)?;
        }
        Ok(())
    }

    fn check_spatial(&self, what: &'static str, shape: &[usize], channels: usize) -> Result<()> {
        let want = [channels, self.config.input_h, self.config.input_w];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::shape(
                what,
                format!("expected [N, {}, {}, {}], got {shape:?}", want[0], want[1], want[2]),
            ));
        }
        Ok(())
    }

    /// Image `[N,3,H,W]` -> albedo, shape-independent shading and light code.
    pub fn decompose_vars(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<DecomposeVars> {
        self.check_spatial("decompose", ctx.tape.shape(image), 3)?;
        let d = &self.decomposer;
        let mut x = image;
        for layer in &d.shared {
            x = layer.forward(ctx, x)?;
        }
        let features = x;

        let mut a = features;
        for b in &d.albedo_blocks {
            a = b.forward(ctx, a)?;
        }
        let a = d.albedo_head.forward(ctx, a)?;
        let albedo = ctx.tape.sigmoid(a);

        let mut si = features;
        for b in &d.shadow_blocks {
            si = b.forward(ctx, si)?;
        }
        let si = d.shadow_head.forward(ctx, si)?;
        let s_i = ctx.tape.sigmoid(si);

        let mut l = features;
        for layer in &d.light_encoder {
            l = layer.forward(ctx, l)?;
        }
        let n = ctx.tape.shape(l)[0];
        let flat: usize = ctx.tape.shape(l)[1..].iter().product();
        let l = ctx.tape.reshape(l, &[n, flat])?;
        let code = d.light_fc.forward(ctx, l)?;
        // the shading target sums all B light triples, so a plain FC head
        // would move that sum B times faster than any single weight
        let lights = (self.config.code_dim / LIGHT_CHUNK) as f64;
        let code = ctx.tape.scale(code, T::lit(1.0 / lights));
        Ok(DecomposeVars { albedo, s_i, code })
    }

    /// Log depth `[N,1,H,W]` and code `[N,code_dim]` -> shading `[N,3,H,W]`, non-negative.
    pub fn render_vars(&self, ctx: &mut Ctx<'_, T>, log_depth: Var, code: Var) -> Result<Var> {
        self.check_spatial("render_shading", ctx.tape.shape(log_depth), 1)?;
        let cs = ctx.tape.shape(code).to_vec();
        let n = ctx.tape.shape(log_depth)[0];
        if cs != [n, self.config.code_dim] {
            return Err(Error::shape(
                "render_shading",
                format!("light code {cs:?}, expected [{n}, {}]", self.config.code_dim),
            ));
        }
        let r = &self.renderer;
        let mut feats = Vec::with_capacity(r.encoder.len());
        let mut x = log_depth;
        for layer in &r.encoder {
            x = layer.forward(ctx, x)?;
            feats.push(x);
        }
        let flat: usize = ctx.tape.shape(x)[1..].iter().product();
        let x = ctx.tape.reshape(x, &[n, flat])?;
        let shape_feat = r.encoder_fc.forward(ctx, x)?;
        let shape_feat = ctx.tape.relu(shape_feat);
        let joint = ctx.tape.concat(shape_feat, code)?;
        let seed = r.decoder_fc.forward(ctx, joint)?;
        let seed = ctx.tape.relu(seed);
        let [c, h, w] = r.seed_shape;
        let mut x = ctx.tape.reshape(seed, &[n, c, h, w])?;
        for (pre, post, skip) in &r.stages {
            x = ctx.tape.upsample2x(x)?;
            x = pre.forward(ctx, x)?;
            x = ctx.tape.concat(x, feats[*skip])?;
            x = post.forward(ctx, x)?;
        }
        x = ctx.tape.upsample2x(x)?;
        x = r.last.forward(ctx, x)?;
        let x = r.head.forward(ctx, x)?;
        Ok(ctx.tape.softplus(x))
    }

    fn check_plane(&self, what: &'static str, p: &Plane) -> Result<()> {
        if p.width() != self.config.input_w || p.height() != self.config.input_h {
            return Err(Error::shape(
                what,
                format!(
                    "input is {}x{}, model expects {}x{}",
                    p.width(),
                    p.height(),
                    self.config.input_w,
                    self.config.input_h
                ),
            ));
        }
        Ok(())
    }

    /// Eval-mode decomposition. Images are run one at a time so each result
    /// is independent of what else is in the batch.
    pub fn decompose(&self, images: &[&Plane]) -> Result<Vec<Decomposition>> {
        for p in images {
            self.check_plane("decompose", p)?;
        }
        images.iter().map(|p| self.decompose_one(p)).collect()
    }

    fn decompose_one(&self, image: &Plane) -> Result<Decomposition> {
        let mut tape = Tape::new();
        let x = tape.constant(Plane::stack(&[image])?);
        let mut ctx = Ctx::new(&mut tape, &self.store, false);
        let out = self.decompose_vars(&mut ctx, x)?;
        let albedo = Plane::unstack(tape.value(out.albedo))?.remove(0);
        let s_i = Plane::unstack(tape.value(out.s_i))?.remove(0);
        let light = LightCode::new(
            tape.value(out.code)
                .data()
                .iter()
                .map(|v| v.to_f64().unwrap() as f32)
                .collect(),
        )?;
        Ok(Decomposition { albedo, s_i, light })
    }

    /// Eval-mode shape-dependent shading for depth maps under the given
    /// codes, one pair at a time.
    pub fn render_shading(&self, depths: &[&DepthMap], codes: &[&LightCode]) -> Result<Vec<Plane>> {
        if depths.len() != codes.len() {
            return Err(Error::shape(
                "render_shading",
                format!("{} depth maps vs {} codes", depths.len(), codes.len()),
            ));
        }
        let logs: Vec<Plane> = depths.iter().map(|d| d.log_plane()).collect();
        for p in &logs {
            self.check_plane("render_shading", p)?;
        }
        let dim = self.config.code_dim;
        if let Some(c) = codes.iter().find(|c| c.dim() != dim) {
            return Err(Error::shape(
                "render_shading",
                format!("code_dim {} vs model {dim}", c.dim()),
            ));
        }
        logs.iter()
            .zip(codes)
            .map(|(log_depth, code)| {
                let flat = code.values().iter().map(|&v| T::lit(v as f64)).collect();
                let mut tape = Tape::new();
                let d = tape.constant(Plane::stack(&[log_depth])?);
                let l = tape.constant(Tensor::new(vec![1, dim], flat)?);
                let mut ctx = Ctx::new(&mut tape, &self.store, false);
                let s_d = self.render_vars(&mut ctx, d, l)?;
                Ok(Plane::unstack(tape.value(s_d))?.remove(0))
            })
            .collect()
    }

    /// Parameters, buffers and model metadata as `f32` tensors.
    pub fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let c = &self.config;
        let meta = vec![c.width_scale as f32, c.input_h as f32, c.input_w as f32, c.code_dim as f32];
        let mut out = vec![
            (META_MODEL.to_string(), Tensor::new(vec![4], meta).unwrap()),
            (
                META_TRAINED.to_string(),
                Tensor::scalar(if self.trained { 1.0 } else { 0.0 }),
            ),
        ];
        out.extend(self.store.named().map(|(n, t)| (n.to_string(), t.cast::<f32>())));
        out
    }

    /// Rebuilds a model from checkpoint tensors; unknown extra tensors are ignored.
    pub fn from_checkpoint_tensors(tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let meta = find(META_MODEL)
            .filter(|t| t.len() == 4)
            .ok_or_else(|| Error::corrupt("checkpoint", "missing model metadata"))?
            .data();
        let config = ModelConfig {
            width_scale: meta[0] as f64,
            input_h: meta[1] as usize,
            input_w: meta[2] as usize,
            code_dim: meta[3] as usize,
            seed: 0,
        };
        let mut net = Self::new(config).map_err(|e| Error::corrupt("checkpoint", e.to_string()))?;
        let cast: Vec<(String, Tensor<T>)> = tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect();
        net.store.load_named(cast.iter().map(|(n, t)| (n.as_str(), t)))?;
        net.trained = find(META_TRAINED).map(|t| t.item() != 0.0).unwrap_or(false);
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tensors(path.as_ref(), &self.checkpoint_tensors())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_tensors(&load_tensors(path.as_ref())?)
    }
}

pub(crate) fn save_tensors(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), tensors.iter().map(|(n, t)| (n.as_str(), t)))
}

pub(crate) fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Corrupt { detail, .. } => Error::corrupt(path.display().to_string(), detail),
        other => other,
    })
}
