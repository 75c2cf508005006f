use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::layers::Ctx;
use super::model::{load_tensors, save_tensors, DeRenderNet};
use super::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{objective, LossBreakdown, LossWeights, Targets};
use crate::plane::{Mask, Plane};
use crate::preprocess::{
    depth_to_normal, pseudo_shading, shadow_prior, valid_mask, DepthMap, Intrinsics, NormalMap, ShadowPrior,
    DEFAULT_SKY_THRESHOLD,
};
use crate::synth::Scene;
use crate::tensor::{ParamId, Tape, Tensor};

const TRAIN_STATE: &str = "train.state";

/// Learning rate for a 1-based epoch: halved every `halve_every` epochs.
pub fn lr_for_epoch(lr0: f64, halve_every: usize, epoch: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch.saturating_sub(1) / halve_every.max(1)) as i32)
}

/// Everything the losses need for one scene.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub image: Plane,
    pub albedo: Plane,
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub prior: ShadowPrior,
    pub mask: Mask,
}

/// Derives normals, shadow prior and valid mask from image, albedo and depth.
pub fn prepare_sample(
    image: Plane,
    albedo: Plane,
    depth: DepthMap,
    intrinsics: &Intrinsics,
    sky_threshold: f32,
) -> Result<TrainingSample> {
    image.check_same(&albedo, "prepare_sample")?;
    if image.channels() != 3 {
        return Err(Error::shape("prepare_sample", format!("image has {} channels", image.channels())));
    }
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(Error::shape("prepare_sample", "depth and image sizes differ"));
    }
    let mask = valid_mask(&depth, sky_threshold)?;
    let normals = depth_to_normal(&depth, intrinsics);
    let prior = shadow_prior(&pseudo_shading(&image, &albedo)?);
    Ok(TrainingSample {
        image,
        albedo,
        depth,
        normals,
        prior,
        mask,
    })
}

impl TrainingSample {
    /// Sample built from a synthetic scene's image, albedo and depth only.
    pub fn from_scene(scene: &Scene) -> Result<Self> {
        prepare_sample(
            scene.image.clone(),
            scene.albedo.clone(),
            scene.depth.clone(),
            &scene.intrinsics,
            DEFAULT_SKY_THRESHOLD,
        )
    }
}

/// Stacked NCHW tensors for one step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub log_depth: Tensor<f32>,
    pub targets: Targets<f32>,
    pub valid_pixels: usize,
}

pub fn stack_batch(samples: &[&TrainingSample]) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::shape("stack_batch", "empty batch"));
    }
    let stack = |f: &dyn Fn(&TrainingSample) -> Plane| -> Result<Tensor<f32>> {
        let planes: Vec<Plane> = samples.iter().map(|s| f(s)).collect();
        let refs: Vec<&Plane> = planes.iter().collect();
        Plane::stack(&refs)
    };
    Ok(Batch {
        log_depth: stack(&|s| s.depth.log_plane())?,
        targets: Targets {
            image: stack(&|s| s.image.clone())?,
            albedo: stack(&|s| s.albedo.clone())?,
            normals: stack(&|s| s.normals.to_plane())?,
            prior: stack(&|s| s.prior.plane().clone())?,
            mask: stack(&|s| s.mask.to_plane())?,
        },
        valid_pixels: samples.iter().map(|s| s.mask.count()).sum(),
    })
}

/// Loss components of one step or the mean over an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_recon: f64,
    pub l_a: f64,
    pub l_sd: f64,
    pub l_si: f64,
    pub total: f64,
}

impl From<LossBreakdown> for StepLosses {
    fn from(b: LossBreakdown) -> Self {
        Self {
            l_recon: b.l_recon,
            l_a: b.l_a,
            l_sd: b.l_sd,
            l_si: b.l_si,
            total: b.total,
        }
    }
}

impl StepLosses {
    fn is_finite(&self) -> bool {
        [self.l_recon, self.l_a, self.l_sd, self.l_si, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Result of a forward/backward pass; gradients are in trainable-parameter order.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub losses: StepLosses,
    pub grads: Vec<(ParamId, Tensor<f32>)>,
    pub bn_updates: Vec<(ParamId, Tensor<f32>)>,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_recon: f64,
    pub l_a: f64,
    pub l_sd: f64,
    pub l_si: f64,
    pub total: f64,
    pub lr: f64,
}

/// Model, optimizer and schedule position.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: DeRenderNet<f32>,
    pub config: TrainConfig,
    adam: Adam<f32>,
    /// Completed epochs.
    epoch: usize,
    steps: u64,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = DeRenderNet::new(model)?;
        let adam = Adam::new(net.store());
        Ok(Self {
            net,
            config,
            adam,
            epoch: 0,
            steps: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(path: impl AsRef<Path>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let path = path.as_ref();
        let tensors = load_tensors(path)?;
        let net = DeRenderNet::from_checkpoint_tensors(&tensors)?;
        let adam = Adam::from_state_tensors(net.store(), &tensors)?;
        let state = tensors
            .iter()
            .find(|(n, _)| n == TRAIN_STATE)
            .map(|(_, t)| t)
            .filter(|t| t.len() == 2)
            .ok_or_else(|| Error::corrupt(path.display().to_string(), "no training state"))?;
        Ok(Self {
            net,
            config,
            adam,
            epoch: state.data()[0] as usize,
            steps: state.data()[1] as u64,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            albedo: self.config.lambda_a,
            shape_dependent: self.config.lambda_sd,
            shape_independent: self.config.lambda_si,
        }
    }

    /// Training-mode forward and backward without touching parameters.
    pub fn gradients(&self, batch: &Batch) -> Result<StepGradients> {
        let mut tape = Tape::new();
        let store = self.net.store();
        let image = tape.constant(batch.targets.image.clone());
        let depth = tape.constant(batch.log_depth.clone());
        let mut ctx = Ctx::new(&mut tape, store, true);
        let dec = self.net.decompose_vars(&mut ctx, image)?;
        let s_d = self.net.render_vars(&mut ctx, depth, dec.code)?;
        let bn_updates = std::mem::take(&mut ctx.bn_updates);
        let w = self.weights();
        let vars = objective(&mut tape, dec.albedo, dec.s_i, s_d, dec.code, &batch.targets, &w)?;
        let losses = StepLosses::from(vars.breakdown(&tape, batch.valid_pixels, &w));
        let mut grads: Vec<(ParamId, Tensor<f32>)> = store
            .trainable_ids()
            .map(|id| (id, Tensor::zeros(store.value(id).shape())))
            .collect();
        if losses.total.is_finite() {
            let g = tape.backward(vars.total)?;
            for &(id, var) in tape.param_vars() {
                if let (Some(src), Some(dst)) = (g.get(var), grads.iter_mut().find(|(i, _)| *i == id)) {
                    dst.1.add_assign(src);
                }
            }
        }
        Ok(StepGradients {
            losses,
            grads,
            bn_updates,
        })
    }

    /// One optimizer step. A non-finite loss or gradient leaves the
    /// parameters untouched and reports a numerical error.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<StepLosses> {
        let StepGradients {
            losses,
            grads,
            bn_updates,
        } = self.gradients(batch)?;
        if !losses.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {}: {losses:?}", self.steps + 1)));
        }
        let store = self.net.store_mut();
        for (id, g) in &grads {
            if !g.all_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for {}", store.name(*id))));
            }
            store.grad_mut(*id).data_mut().copy_from_slice(g.data());
        }
        self.adam.step(store, lr);
        self.net.apply_bn_updates(bn_updates)?;
        self.steps += 1;
        Ok(losses)
    }

    /// Sample order for a 1-based epoch; depends only on the seed and epoch.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order
    }

    /// Batches of the given epoch in training order.
    pub fn epoch_batches(&self, samples: &[TrainingSample], epoch: usize) -> Result<Vec<Batch>> {
        let order = self.epoch_order(samples.len(), epoch);
        order
            .chunks(self.config.batch)
            .map(|idx| stack_batch(&idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>()))
            .collect()
    }

    /// Runs the next epoch. On a numerical failure the parameters are left at
    /// the last finite state.
    pub fn run_epoch(&mut self, samples: &[TrainingSample]) -> Result<EpochLog> {
        if samples.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        let epoch = self.epoch + 1;
        let lr = lr_for_epoch(self.config.lr, self.config.halve_every, epoch);
        let mut sum = StepLosses::default();
        let mut count = 0usize;
        let order = self.epoch_order(samples.len(), epoch);
        for idx in order.chunks(self.config.batch) {
            let batch = stack_batch(&idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>())?;
            let before = self.net.store().clone();
            match self.step(&batch, lr) {
                Ok(l) => {
                    sum.l_recon += l.l_recon;
                    sum.l_a += l.l_a;
                    sum.l_sd += l.l_sd;
                    sum.l_si += l.l_si;
                    sum.total += l.total;
                    count += 1;
                }
                Err(e) => {
                    *self.net.store_mut() = before;
                    return Err(e);
                }
            }
            if !self.net.store().named().all(|(_, t)| t.all_finite()) {
                *self.net.store_mut() = before;
                return Err(Error::Numerical("parameters became non-finite".into()));
            }
        }
        self.epoch = epoch;
        let k = count as f64;
        Ok(EpochLog {
            epoch,
            l_recon: sum.l_recon / k,
            l_a: sum.l_a / k,
            l_sd: sum.l_sd / k,
            l_si: sum.l_si / k,
            total: sum.total / k,
            lr,
        })
    }

    /// Trains up to `config.epochs`, writing one JSON line per epoch to `log`
    /// and a checkpoint after every epoch when `checkpoint` is given. A
    /// numerical failure writes the last good state before returning.
    pub fn train(
        &mut self,
        samples: &[TrainingSample],
        checkpoint: Option<&Path>,
        log: &mut dyn Write,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            match self.run_epoch(samples) {
                Ok(entry) => {
                    let line = serde_json::to_string(&entry).expect("log entry serializes");
                    writeln!(log, "{line}").map_err(|e| Error::io("training log", e))?;
                    logs.push(entry);
                    if self.epoch == self.config.epochs {
                        self.net.set_trained(true);
                    }
                    if let Some(p) = checkpoint {
                        self.save(p)?;
                    }
                }
                Err(e) => {
                    if let Some(p) = checkpoint {
                        self.save(p)?;
                    }
                    return Err(e);
                }
            }
        }
        self.net.set_trained(true);
        Ok(logs)
    }

    /// Model, optimizer state and schedule position in one checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = self.net.checkpoint_tensors();
        tensors.extend(self.adam.state_tensors(self.net.store()));
        tensors.push((
            TRAIN_STATE.to_string(),
            Tensor::new(vec![2], vec![self.epoch as f32, self.steps as f32])?,
        ));
        save_tensors(path.as_ref(), &tensors)
    }
}
