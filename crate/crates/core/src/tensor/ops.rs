//! Forward constructors for tape ops and the matching vector-Jacobian products.

use super::conv::{self, ConvGeom};
use super::tape::{Op, Tape, Var};
use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub(crate) fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip of equal shapes")
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("operands {a:?} and {b:?} differ")));
    }
    Ok(())
}

fn rank(op: &'static str, name: &str, s: &[usize], r: usize) -> Result<()> {
    if s.len() != r {
        return Err(Error::shape(op, format!("{name} must be rank {r}, got {s:?}")));
    }
    Ok(())
}

fn nchw(s: &[usize]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

/// Running statistics produced by a training-mode batch norm.
pub struct BnUpdate<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x [N,Cin,H,W]` with `w [Cout,Cin,K,K]` plus bias `b [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        rank(OP, "input", xs, 4)?;
        rank(OP, "weight", ws, 4)?;
        if ws[2] != ws[3] {
            return Err(Error::shape(OP, format!("kernel must be square, got {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                OP,
                format!("input channels (dim 1) {} != weight in-channels {}", xs[1], ws[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(Error::shape(
                OP,
                format!("bias {bs:?} does not match out-channels {}", ws[0]),
            ));
        }
        let g = ConvGeom::new(xs, ws, stride, pad).ok_or_else(|| {
            Error::shape(OP, format!("input {xs:?} smaller than kernel with pad {pad}"))
        })?;
        let out = conv::conv2d_forward(&g, self.value(x), self.value(w), self.value(b));
        Ok(self.record(out, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Affine map `x [N,F] -> x W^T + b` with `w [G,F]`, `b [G]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        rank(OP, "input", xs, 2)?;
        rank(OP, "weight", ws, 2)?;
        if xs[1] != ws[1] {
            return Err(Error::shape(
                OP,
                format!("input features (dim 1) {} != weight columns {}", xs[1], ws[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(Error::shape(OP, format!("bias {bs:?} does not match {} outputs", ws[0])));
        }
        let (n, g) = (xs[0], ws[0]);
        let f = xs[1];
        let mut out = vec![T::zero(); n * g];
        for row in out.chunks_mut(g) {
            row.copy_from_slice(self.value(b).data());
        }
        T::gemm(false, true, n, f, g, T::one(), self.value(x).data(), self.value(w).data(), T::one(), &mut out);
        let out = Tensor::new(vec![n, g], out)?;
        Ok(self.record(out, Op::Dense { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.record(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.record(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.record(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.record(out, Op::Scale(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.record(out, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.record(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.record(out, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.record(out, Op::Softplus(a))
    }

    /// Sum of all elements to a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        self.record(Tensor::scalar(T::lit(s)), Op::Sum(a))
    }

    /// Mean of `x` over positions where `mask != 0`. Values at masked-out
    /// positions are never read.
    pub fn mean_masked(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        same_shape("mean_masked", self.shape(x), mask.shape())?;
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for (&v, &m) in self.value(x).data().iter().zip(mask.data()) {
            if m != T::zero() {
                acc += v.to_f64().unwrap_or(f64::NAN);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let out = Tensor::scalar(T::lit(acc / count as f64));
        Ok(self.record(
            out,
            Op::MeanMasked {
                x,
                mask: mask.clone(),
                count,
            },
        ))
    }

    /// `[N,C,H,W] -> [N,1,H,W]` mean over channels.
    pub fn channel_mean(&mut self, a: Var) -> Result<Var> {
        rank("channel_mean", "input", self.shape(a), 4)?;
        let (n, c, h, w) = nchw(self.shape(a));
        let x = self.value(a).data();
        let hw = h * w;
        let inv = T::one() / T::from_usize(c).unwrap();
        let mut out = vec![T::zero(); n * hw];
        for i in 0..n {
            for ch in 0..c {
                let src = &x[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                for (o, &v) in out[i * hw..(i + 1) * hw].iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new(vec![n, 1, h, w], out)?;
        Ok(self.record(out, Op::ChannelMean(a)))
    }

    /// `[N,1,H,W] -> [N,C,H,W]` by repetition.
    pub fn expand_channels(&mut self, a: Var, c: usize) -> Result<Var> {
        let s = self.shape(a);
        rank("expand_channels", "input", s, 4)?;
        if s[1] != 1 {
            return Err(Error::shape("expand_channels", format!("dim 1 must be 1, got {s:?}")));
        }
        let (n, _, h, w) = nchw(s);
        let x = self.value(a).data();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c * hw);
        for i in 0..n {
            for _ in 0..c {
                out.extend_from_slice(&x[i * hw..(i + 1) * hw]);
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.record(out, Op::ExpandChannels(a)))
    }

    /// Concatenation along dim 1; all other dims must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape("concat", format!("cannot join {sa:?} and {sb:?} on dim 1")));
        }
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * inner, sb[1] * inner);
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(sa[0] * (ca + cb));
        for i in 0..sa[0] {
            out.extend_from_slice(&xa[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&xb[i * cb..(i + 1) * cb]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        let out = Tensor::new(shape, out)?;
        Ok(self.record(out, Op::Concat(a, b)))
    }

    /// Nearest-neighbour 2x upsampling of `[N,C,H,W]`.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        rank("upsample2x", "input", self.shape(a), 4)?;
        let (n, c, h, w) = nchw(self.shape(a));
        let x = self.value(a).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::new(vec![n, c, h2, w2], out)?;
        Ok(self.record(out, Op::Upsample2x(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record(out, Op::Reshape(a)))
    }

    /// Per-channel batch normalization of `[N,C,H,W]`.
    ///
    /// In training mode the batch statistics normalize `x` and the updated
    /// running statistics (momentum [`BN_MOMENTUM`], unbiased variance) are
    /// returned for the caller to store. In eval mode the running statistics
    /// are used as constants.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        training: bool,
    ) -> Result<(Var, Option<BnUpdate<T>>)> {
        const OP: &str = "batchnorm2d";
        rank(OP, "input", self.shape(x), 4)?;
        let (n, c, h, w) = nchw(self.shape(x));
        for (name, len) in [
            ("gamma", self.value(gamma).len()),
            ("beta", self.value(beta).len()),
            ("running_mean", running_mean.len()),
            ("running_var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape(OP, format!("{name} has {len} channels, input has {c}")));
            }
        }
        let hw = h * w;
        let m = n * hw;
        let xd = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut update = training.then(|| BnUpdate {
            mean: running_mean.to_vec(),
            var: running_var.to_vec(),
        });
        let momentum = BN_MOMENTUM;
        for ch in 0..c {
            let idx = |i: usize, p: usize| (i * c + ch) * hw + p;
            let (mean, var) = if training {
                let mut s = 0.0f64;
                for i in 0..n {
                    for p in 0..hw {
                        s += xd[idx(i, p)].to_f64().unwrap();
                    }
                }
                let mean = s / m as f64;
                let mut ss = 0.0f64;
                for i in 0..n {
                    for p in 0..hw {
                        let d = xd[idx(i, p)].to_f64().unwrap() - mean;
                        ss += d * d;
                    }
                }
                let var = ss / m as f64;
                if let Some(u) = update.as_mut() {
                    let unbiased = if m > 1 { ss / (m - 1) as f64 } else { var };
                    let rm = running_mean[ch].to_f64().unwrap();
                    let rv = running_var[ch].to_f64().unwrap();
                    u.mean[ch] = T::lit((1.0 - momentum) * rm + momentum * mean);
                    u.var[ch] = T::lit((1.0 - momentum) * rv + momentum * unbiased);
                }
                (mean, var)
            } else {
                (
                    running_mean[ch].to_f64().unwrap(),
                    running_var[ch].to_f64().unwrap(),
                )
            };
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = T::lit(istd);
            let (mean_t, istd_t) = (T::lit(mean), T::lit(istd));
            for i in 0..n {
                for p in 0..hw {
                    let j = idx(i, p);
                    let xh = (xd[j] - mean_t) * istd_t;
                    xhat[j] = xh;
                    out[j] = g[ch] * xh + b[ch];
                }
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        let v = self.record(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: training,
            },
        );
        Ok((v, update))
    }

    /// For each position of `x [N,C,H,W]`, the sum of squared differences to
    /// its 4-connected neighbours. Only positions with `mask [N,1,H,W] != 0`
    /// produce output and only such neighbours contribute; other values are
    /// never read.
    pub fn neighbor_sq_diff(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        const OP: &str = "neighbor_sq_diff";
        let s = self.shape(x).to_vec();
        rank(OP, "input", &s, 4)?;
        let (n, c, h, w) = nchw(&s);
        if mask.shape() != [n, 1, h, w] {
            return Err(Error::shape(OP, format!("mask {:?} vs input {s:?}", mask.shape())));
        }
        let xd = self.value(x).data();
        let md = mask.data();
        let mut out = vec![T::zero(); xd.len()];
        for_each_valid_edge(n, h, w, md, |i, p, q| {
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                let d = xd[base + p] - xd[base + q];
                out[base + p] += d * d;
            }
        });
        let out = Tensor::new(s, out)?;
        Ok(self.record(
            out,
            Op::NeighborSqDiff {
                x,
                mask: mask.clone(),
            },
        ))
    }

    /// Per-pixel dot product of `x [N,C,H,W]` with a per-sample vector `v [N,C]`.
    pub fn pixel_dot(&mut self, x: Var, v: Var) -> Result<Var> {
        const OP: &str = "pixel_dot";
        let (xs, vs) = (self.shape(x).to_vec(), self.shape(v).to_vec());
        rank(OP, "input", &xs, 4)?;
        if vs != [xs[0], xs[1]] {
            return Err(Error::shape(OP, format!("vector {vs:?} vs input {xs:?}")));
        }
        let (n, c, h, w) = nchw(&xs);
        let hw = h * w;
        let (xd, vd) = (self.value(x).data(), self.value(v).data());
        let mut out = vec![T::zero(); n * hw];
        for i in 0..n {
            for ch in 0..c {
                let k = vd[i * c + ch];
                let src = &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                for (o, &xv) in out[i * hw..(i + 1) * hw].iter_mut().zip(src) {
                    *o += xv * k;
                }
            }
        }
        let out = Tensor::new(vec![n, 1, h, w], out)?;
        Ok(self.record(out, Op::PixelDot { x, v }))
    }
}

/// Calls `f(sample, p, q)` for every ordered pair of 4-connected valid pixels
/// (`p` and `q` flat indices into an `h x w` plane).
fn for_each_valid_edge<T: Real>(
    n: usize,
    h: usize,
    w: usize,
    mask: &[T],
    mut f: impl FnMut(usize, usize, usize),
) {
    let hw = h * w;
    for i in 0..n {
        let m = &mask[i * hw..(i + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if m[p] == T::zero() {
                    continue;
                }
                let mut visit = |q: usize| {
                    if m[q] != T::zero() {
                        f(i, p, q);
                    }
                };
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
            }
        }
    }
}

pub(crate) fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let g = w.shape()[0];
    let mut dx = Tensor::zeros(x.shape());
    T::gemm(false, false, n, g, f, T::one(), dy.data(), w.data(), T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(w.shape());
    T::gemm(true, false, g, n, f, T::one(), dy.data(), x.data(), T::zero(), dw.data_mut());
    let mut db = vec![0.0f64; g];
    for row in dy.data().chunks(g) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v.to_f64().unwrap();
        }
    }
    let db = Tensor::new(vec![g], db.into_iter().map(T::lit).collect()).unwrap();
    (dx, dw, db)
}

pub(crate) fn mul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    (zip(g, b, |g, b| g * b), zip(g, a, |g, a| g * a))
}

pub(crate) fn channel_mean_backward<T: Real>(shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = nchw(shape);
    let hw = h * w;
    let inv = T::one() / T::from_usize(c).unwrap();
    let gd = g.data();
    let mut out = Vec::with_capacity(n * c * hw);
    for i in 0..n {
        for _ in 0..c {
            out.extend(gd[i * hw..(i + 1) * hw].iter().map(|&v| v * inv));
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

pub(crate) fn expand_channels_backward<T: Real>(shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (n, _, h, w) = nchw(shape);
    let c = g.shape()[1];
    let hw = h * w;
    let gd = g.data();
    let mut out = vec![T::zero(); n * hw];
    for i in 0..n {
        for ch in 0..c {
            let src = &gd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
            for (o, &v) in out[i * hw..(i + 1) * hw].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

pub(crate) fn concat_backward<T: Real>(
    sa: &[usize],
    sb: &[usize],
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let inner: usize = sa[2..].iter().product();
    let (ca, cb) = (sa[1] * inner, sb[1] * inner);
    let gd = g.data();
    let mut ga = Vec::with_capacity(sa[0] * ca);
    let mut gb = Vec::with_capacity(sa[0] * cb);
    for i in 0..sa[0] {
        let row = &gd[i * (ca + cb)..(i + 1) * (ca + cb)];
        ga.extend_from_slice(&row[..ca]);
        gb.extend_from_slice(&row[ca..]);
    }
    (
        Tensor::new(sa.to_vec(), ga).unwrap(),
        Tensor::new(sb.to_vec(), gb).unwrap(),
    )
}

pub(crate) fn upsample2x_backward<T: Real>(shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = nchw(shape);
    let w2 = 2 * w;
    let gd = g.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let src = &gd[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for x in 0..w2 {
                dst[(y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

pub(crate) fn batchnorm_backward<T: Real>(
    shape: &[usize],
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = nchw(shape);
    let hw = h * w;
    let m = (n * hw) as f64;
    let gd = g.data();
    let mut dx = vec![T::zero(); gd.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let idx = |i: usize, p: usize| (i * c + ch) * hw + p;
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for i in 0..n {
            for p in 0..hw {
                let j = idx(i, p);
                let gv = gd[j].to_f64().unwrap();
                sg += gv;
                sgx += gv * xhat[j].to_f64().unwrap();
            }
        }
        dgamma[ch] = T::lit(sgx);
        dbeta[ch] = T::lit(sg);
        let gam = gamma.data()[ch];
        let istd = inv_std[ch];
        if batch_stats {
            // dx = gamma*istd/m * (m*g - sum(g) - xhat*sum(g*xhat))
            let k = gam * istd / T::lit(m);
            let (sg, sgx, mt) = (T::lit(sg), T::lit(sgx), T::lit(m));
            for i in 0..n {
                for p in 0..hw {
                    let j = idx(i, p);
                    dx[j] = k * (mt * gd[j] - sg - xhat[j] * sgx);
                }
            }
        } else {
            for i in 0..n {
                for p in 0..hw {
                    let j = idx(i, p);
                    dx[j] = gd[j] * gam * istd;
                }
            }
        }
    }
    (
        Tensor::new(shape.to_vec(), dx).unwrap(),
        Tensor::new(vec![c], dgamma).unwrap(),
        Tensor::new(vec![c], dbeta).unwrap(),
    )
}

pub(crate) fn neighbor_sq_diff_backward<T: Real>(
    x: &Tensor<T>,
    mask: &Tensor<T>,
    g: &Tensor<T>,
) -> Tensor<T> {
    let (n, c, h, w) = nchw(x.shape());
    let xd = x.data();
    let gd = g.data();
    let mut dx = vec![T::zero(); xd.len()];
    let two = T::lit(2.0);
    for_each_valid_edge(n, h, w, mask.data(), |i, p, q| {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            let d = two * (xd[base + p] - xd[base + q]) * gd[base + p];
            dx[base + p] += d;
            dx[base + q] -= d;
        }
    });
    Tensor::new(x.shape().to_vec(), dx).unwrap()
}

pub(crate) fn pixel_dot_backward<T: Real>(
    x: &Tensor<T>,
    v: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = nchw(x.shape());
    let hw = h * w;
    let (xd, vd, gd) = (x.data(), v.data(), g.data());
    let mut gx = vec![T::zero(); xd.len()];
    let mut gv = vec![T::zero(); vd.len()];
    for i in 0..n {
        let gi = &gd[i * hw..(i + 1) * hw];
        for ch in 0..c {
            let k = vd[i * c + ch];
            let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
            let mut acc = 0.0f64;
            for ((o, &xv), &gg) in gx[range.clone()].iter_mut().zip(&xd[range]).zip(gi) {
                *o = gg * k;
                acc += (gg * xv).to_f64().unwrap();
            }
            gv[i * c + ch] = T::lit(acc);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).unwrap(),
        Tensor::new(v.shape().to_vec(), gv).unwrap(),
    )
}
