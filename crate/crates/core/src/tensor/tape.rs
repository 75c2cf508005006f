use super::{conv, ops, ParamId, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Square(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sum(Var),
    MeanMasked {
        x: Var,
        mask: Tensor<T>,
        count: usize,
    },
    ChannelMean(Var),
    ExpandChannels(Var),
    Concat(Var, Var),
    Upsample2x(Var),
    Reshape(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    NeighborSqDiff {
        x: Var,
        mask: Tensor<T>,
    },
    PixelDot {
        x: Var,
        v: Var,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, b, .. } | Dense { x, w, b } => vec![*x, *w, *b],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Concat(a, b) => vec![*a, *b],
            Scale(a, _) | Square(a) | Relu(a) | Sigmoid(a) | Softplus(a) | Sum(a)
            | ChannelMean(a) | ExpandChannels(a) | Upsample2x(a) | Reshape(a) => vec![*a],
            MeanMasked { x, .. } | NeighborSqDiff { x, .. } => vec![*x],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            PixelDot { x, v } => vec![*x, *v],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Records operations in creation order; [`Tape::backward`] replays them in reverse.
///
/// A tape is single-threaded. Independent tapes may run on separate threads.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A detached leaf; never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub(crate) fn param_leaf(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        let v = self.leaf(value);
        self.params.push((id, v));
        v
    }

    pub(crate) fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Pushes a non-leaf node; it requires grad iff any input does.
    pub(crate) fn record(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Returns fresh gradient buffers, so calling it twice on the same tape
    /// yields identical results.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, gi) in self.input_grads(node, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn input_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        use Op::*;
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Leaf => vec![],
            Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (dx, dw, db) =
                    conv::conv2d_backward(val(*x), val(*w), g, *stride, *pad, want(*x));
                let mut out = vec![(*w, dw), (*b, db)];
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out
            }
            Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(val(*x), val(*w), g);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Mul(a, b) => {
                let (ga, gb) = ops::mul_backward(val(*a), val(*b), g);
                vec![(*a, ga), (*b, gb)]
            }
            Scale(a, c) => {
                let c = *c;
                vec![(*a, g.map(|v| v * c))]
            }
            Square(a) => vec![(*a, ops::zip(val(*a), g, |x, g| T::lit(2.0) * x * g))],
            Relu(a) => vec![(
                *a,
                ops::zip(val(*a), g, |x, g| if x > T::zero() { g } else { T::zero() }),
            )],
            Sigmoid(a) => vec![(
                *a,
                ops::zip(&node.value, g, |y, g| g * y * (T::one() - y)),
            )],
            Softplus(a) => vec![(*a, ops::zip(val(*a), g, |x, g| g * ops::sigmoid(x)))],
            Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            MeanMasked { x, mask, count } => {
                let scale = g.item() / T::from_usize(*count).unwrap();
                vec![(
                    *x,
                    mask.map(|m| if m != T::zero() { scale } else { T::zero() }),
                )]
            }
            ChannelMean(a) => vec![(*a, ops::channel_mean_backward(val(*a).shape(), g))],
            ExpandChannels(a) => vec![(*a, ops::expand_channels_backward(val(*a).shape(), g))],
            Concat(a, b) => {
                let (ga, gb) = ops::concat_backward(val(*a).shape(), val(*b).shape(), g);
                vec![(*a, ga), (*b, gb)]
            }
            Upsample2x(a) => vec![(*a, ops::upsample2x_backward(val(*a).shape(), g))],
            Reshape(a) => vec![(
                *a,
                g.clone().reshape(val(*a).shape()).expect("reshape grad"),
            )],
            BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (dx, dg, db) = ops::batchnorm_backward(
                    val(*x).shape(),
                    val(*gamma),
                    xhat,
                    inv_std,
                    *batch_stats,
                    g,
                );
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            NeighborSqDiff { x, mask } => {
                vec![(*x, ops::neighbor_sq_diff_backward(val(*x), mask, g))]
            }
            PixelDot { x, v } => {
                let (gx, gv) = ops::pixel_dot_backward(val(*x), val(*v), g);
                vec![(*x, gx), (*v, gv)]
            }
        }
    }
}

/// Per-node gradients produced by one backward sweep.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
