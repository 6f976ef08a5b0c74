//! Reverse-mode differentiation over a linear tape of tensor ops.
//!
//! Nodes are appended in evaluation order, so the tape is topologically sorted by
//! construction and `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Fold(Var),
    Unfold(Var),
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    ScaleByGate {
        x: Var,
        gate: Var,
    },
    SelectChannel {
        x: Var,
        channel: usize,
    },
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
    Bce {
        p: Var,
        target: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Fold(_) => "fold2x2",
            Op::Unfold(_) => "unfold2x2",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::MaxPool { .. } => "max_pool2x2",
            Op::Upsample(_) => "bilinear_upsample",
            Op::Concat(_) => "concat_channels",
            Op::Add(..) => "add",
            Op::ScaleByGate { .. } => "scale_by_gate",
            Op::SelectChannel { .. } => "select_channel",
            Op::Sum(_) => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Bce { .. } => "bce",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Fold(x)
            | Op::Unfold(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::GlobalAvgPool(x)
            | Op::Upsample(x)
            | Op::Sum(x) => vec![*x],
            Op::MaxPool { x, .. } | Op::SelectChannel { x, .. } | Op::WeightedSum { x, .. } => {
                vec![*x]
            }
            Op::Concat(xs) => xs.clone(),
            Op::Add(a, b) => vec![*a, *b],
            Op::ScaleByGate { x, gate } => vec![*x, *gate],
            Op::Bce { p, .. } => vec![*p],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-writer recording of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled to `shape` when `v` is disconnected from the loss.
    pub fn wrt(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter, or an input under gradient check).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Direct inputs of `v` in argument order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// True when `ancestor` is reachable from `v` through op inputs.
    pub fn depends_on(&self, v: Var, ancestor: Var) -> bool {
        if ancestor.0 > v.0 {
            return false;
        }
        let mut seen = vec![false; v.0 + 1];
        let mut stack = vec![v];
        while let Some(n) = stack.pop() {
            if n == ancestor {
                return true;
            }
            if std::mem::replace(&mut seen[n.0], true) {
                continue;
            }
            stack.extend(self.inputs(n).into_iter().filter(|i| i.0 >= ancestor.0));
        }
        false
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let bias = b.map(|b| self.value(b).data());
        let y = ops::conv2d(self.value(x), &spec, self.value(w), bias)?;
        Ok(self.push(y, Op::Conv2d { x, w, b, spec }))
    }

    pub fn fold2x2(&mut self, x: Var) -> Result<Var> {
        let y = ops::fold2x2(self.value(x))?;
        Ok(self.push(y, Op::Fold(x)))
    }

    pub fn unfold2x2(&mut self, x: Var) -> Result<Var> {
        let y = ops::unfold2x2(self.value(x))?;
        Ok(self.push(y, Op::Unfold(x)))
    }

    /// Records fold → conv → unfold as three ordinary nodes.
    pub fn folded_atrous_conv(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        ops::validate_folded(&spec)?;
        let f = self.fold2x2(x)?;
        let c = self.conv2d(f, w, b, spec)?;
        self.unfold2x2(c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool(x)))
    }

    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::max_pool2x2(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    /// Bilinear upsampling to `th × tw`; the target may not be smaller than the source.
    pub fn upsample(&mut self, x: Var, th: usize, tw: usize) -> Result<Var> {
        let s = self.shape(x);
        if th < s.h() || tw < s.w() {
            return Err(Error::shape(
                "bilinear_upsample",
                format!("target {th}x{tw} is smaller than source {}x{}", s.h(), s.w()),
            ));
        }
        if th == s.h() && tw == s.w() {
            return Ok(x);
        }
        let y = ops::resize_bilinear(self.value(x), th, tw)?;
        Ok(self.push(y, Op::Upsample(x)))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w() {
                return Err(Error::shape(
                    "concat_channels",
                    format!("operand {s} does not match {s0} outside the channel axis"),
                ));
            }
            channels += s.c();
        }
        let os = Shape::new(s0.n(), channels, s0.h(), s0.w());
        let mut data = Vec::with_capacity(os.numel());
        for n in 0..s0.n() {
            for &x in xs {
                data.extend_from_slice(self.value(x).sample(n));
            }
        }
        let y = Tensor::from_vec(os, data)?;
        Ok(self.push(y, Op::Concat(xs.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", format!("{sa} vs {sb}")));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Multiplies every element of sample `n` by `gate[n]`; `gate` has shape `(b,1,1,1)`.
    pub fn scale_by_gate(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (sx, sg) = (self.shape(x), self.shape(gate));
        if sg != Shape::new(sx.n(), 1, 1, 1) {
            return Err(Error::shape(
                "scale_by_gate",
                format!("gate {sg} must be ({},1,1,1) for input {sx}", sx.n()),
            ));
        }
        let g = self.value(gate).data().to_vec();
        let mut y = self.value(x).clone();
        for (chunk, &gv) in y.data_mut().chunks_mut(sx.sample()).zip(&g) {
            chunk.iter_mut().for_each(|v| *v = *v * gv);
        }
        Ok(self.push(y, Op::ScaleByGate { x, gate }))
    }

    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let s = self.shape(x);
        if channel >= s.c() {
            return Err(Error::shape(
                "select_channel",
                format!("channel {channel} out of range for {s}"),
            ));
        }
        let os = Shape::new(s.n(), 1, s.h(), s.w());
        let xv = self.value(x);
        let data = (0..s.n()).flat_map(|n| xv.plane(n, channel).to_vec()).collect();
        let y = Tensor::from_vec(os, data)?;
        Ok(self.push(y, Op::SelectChannel { x, channel }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x))
    }

    /// `Σ x·weights` with constant weights; turns any op into a scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        if self.shape(x) != weights.shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} vs weights {}", self.shape(x), weights.shape()),
            ));
        }
        let v = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(
            Tensor::scalar(v),
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
        ))
    }

    /// Mean clamped binary cross-entropy of probabilities `p` against a `{0,1}` target.
    pub fn bce(&mut self, p: Var, target: &Tensor<T>) -> Result<Var> {
        if target
            .data()
            .iter()
            .any(|&v| v != T::zero() && v != T::one())
        {
            return Err(Error::Invalid(
                "bce target must contain only 0 and 1".into(),
            ));
        }
        let l = ops::bce_mean(self.value(p), target)?;
        Ok(self.push(
            Tensor::scalar(l),
            Op::Bce {
                p,
                target: target.clone(),
            },
        ))
    }

    /// Reverse sweep from the scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls != Shape::scalar() {
            return Err(Error::Invalid(format!(
                "backward seed must be a (1,1,1,1) scalar, got {ls}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let need_dx = self.nodes[x.0].requires_grad;
                let (dx, dw, db) = ops::conv2d_backward(self.value(*x), spec, self.value(*w), &g, need_dx)?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    let bs = self.shape(*b);
                    self.accumulate(grads, *b, Tensor::from_vec(bs, db)?);
                }
            }
            Op::Fold(x) => self.accumulate(grads, *x, ops::unfold2x2(&g)?),
            Op::Unfold(x) => self.accumulate(grads, *x, ops::fold2x2(&g)?),
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut d = g;
                for (dv, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                    if v <= T::zero() {
                        *dv = T::zero();
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g;
                for (dv, &y) in d.data_mut().iter_mut().zip(out.data()) {
                    *dv = *dv * y * (T::one() - y);
                }
                self.accumulate(grads, *x, d);
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let denom = T::from_usize(s.plane()).unwrap();
                let mut d = Tensor::zeros(s);
                for (plane, &gv) in d.data_mut().chunks_mut(s.plane()).zip(g.data()) {
                    plane.fill(gv / denom);
                }
                self.accumulate(grads, *x, d);
            }
            Op::MaxPool { x, argmax } => {
                let mut d = Tensor::zeros(self.shape(*x));
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    d.data_mut()[i] = d.data()[i] + gv;
                }
                self.accumulate(grads, *x, d);
            }
            Op::Upsample(x) => {
                let d = ops::resize_bilinear_backward(&g, self.shape(*x));
                self.accumulate(grads, *x, d);
            }
            Op::Concat(xs) => {
                let os = g.shape();
                let mut offset = 0;
                for &x in xs {
                    let s = self.shape(x);
                    if self.nodes[x.0].requires_grad {
                        let mut data = Vec::with_capacity(s.numel());
                        for n in 0..os.n() {
                            let start = n * os.sample() + offset * os.plane();
                            data.extend_from_slice(&g.data()[start..start + s.sample()]);
                        }
                        self.accumulate(grads, x, Tensor::from_vec(s, data)?);
                    }
                    offset += s.c();
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *b, g.clone());
                self.accumulate(grads, *a, g);
            }
            Op::ScaleByGate { x, gate } => {
                let s = self.shape(*x);
                let gv = self.value(*gate).data();
                let xv = self.value(*x);
                let mut dgate = Vec::with_capacity(s.n());
                for n in 0..s.n() {
                    let dot = g
                        .sample(n)
                        .iter()
                        .zip(xv.sample(n))
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
                    dgate.push(dot);
                }
                self.accumulate(grads, *gate, Tensor::from_vec(Shape::new(s.n(), 1, 1, 1), dgate)?);
                let mut dx = g;
                for (chunk, &gv) in dx.data_mut().chunks_mut(s.sample()).zip(gv) {
                    chunk.iter_mut().for_each(|v| *v = *v * gv);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SelectChannel { x, channel } => {
                let s = self.shape(*x);
                let mut d = Tensor::zeros(s);
                for n in 0..s.n() {
                    let start = s.offset(n, *channel, 0, 0);
                    d.data_mut()[start..start + s.plane()].copy_from_slice(g.plane(n, 0));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let d = Tensor::full(self.shape(*x), g.item());
                self.accumulate(grads, *x, d);
            }
            Op::WeightedSum { x, weights } => {
                let scale = g.item();
                self.accumulate(grads, *x, weights.map(|v| v * scale));
            }
            Op::Bce { p, target } => {
                let scale = g.item();
                let d = ops::bce_mean_grad(self.value(*p), target).map(|v| v * scale);
                self.accumulate(grads, *p, d);
            }
        }
        Ok(())
    }
}
