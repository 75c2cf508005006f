use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

pub const KERNEL: usize = 5;
const PAD: usize = 2;

/// Forward-pass context: the tape, read-only parameters, and the running
/// statistics produced by training-mode batch norms.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    pub training: bool,
    pub bn_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, training: bool) -> Self {
        Self {
            tape,
            store,
            training,
            bn_updates: Vec::new(),
        }
    }

    fn param(&mut self, id: ParamId) -> Var {
        self.store.var(self.tape, id)
    }
}

/// Uniform fan-in scaled init, `U(-gain * sqrt(3 / fan_in), +...)`.
fn kaiming<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let shape = [cout, cin, KERNEL, KERNEL];
        let w = if gain == 0.0 {
            Tensor::zeros(&shape)
        } else {
            kaiming(rng, &shape, cin * KERNEL * KERNEL, gain)
        };
        Self {
            w: store.add(format!("{name}.w"), w, true),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[cout]), true),
            stride,
        }
    }

    pub fn with_bias<T: Real>(self, store: &mut ParamStore<T>, bias: f64) -> Self {
        let b = store.value_mut(self.b);
        b.data_mut().fill(T::lit(bias));
        self
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w), ctx.param(self.b));
        ctx.tape.conv2d(x, w, b, self.stride, PAD)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], T::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true),
            mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false),
            var: store.add(format!("{name}.running_var"), Tensor::full(&[c], T::one()), false),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        let rm = ctx.store.value(self.mean).data();
        let rv = ctx.store.value(self.var).data();
        let (y, update) = ctx.tape.batchnorm2d(x, g, b, rm, rv, ctx.training)?;
        if let Some(u) = update {
            let c = u.mean.len();
            ctx.bn_updates.push((self.mean, Tensor::new(vec![c], u.mean)?));
            ctx.bn_updates.push((self.var, Tensor::new(vec![c], u.var)?));
        }
        Ok(y)
    }
}

/// conv -> batch norm -> ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        Self {
            conv: Conv::new(store, rng, &format!("{name}.conv"), cin, cout, stride, RELU_GAIN),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }
}

/// `relu(x + bn(conv(relu(bn(conv(x))))))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    first: ConvBnRelu,
    conv: Conv,
    bn: BatchNorm,
}

impl ResBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        Self {
            first: ConvBnRelu::new(store, rng, &format!("{name}.0"), c, c, 1),
            conv: Conv::new(store, rng, &format!("{name}.1.conv"), c, c, 1, RELU_GAIN),
            bn: BatchNorm::new(store, &format!("{name}.1.bn"), c),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x)?;
        let y = self.conv.forward(ctx, y)?;
        let y = self.bn.forward(ctx, y)?;
        let y = ctx.tape.add(x, y)?;
        Ok(ctx.tape.relu(y))
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        fin: usize,
        fout: usize,
        gain: f64,
    ) -> Self {
        Self {
            w: store.add(format!("{name}.w"), kaiming(rng, &[fout, fin], fin, gain), true),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fout]), true),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w), ctx.param(self.b));
        ctx.tape.dense(x, w, b)
    }
}
