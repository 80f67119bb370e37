//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied during a forward pass as a
//! [`TapeNode`]. Nodes are appended in execution order, so the node list is
//! already a topological order of the computation DAG and
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//!
//! Forward values are stored in the tape's element type; gradients are
//! propagated in `f64`.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

/// Smoothing term added to both numerator and denominator of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-6;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf {
        learnable: bool,
    },
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    /// Transposed convolution; `geom` describes the forward convolution
    /// whose input has this node's output shape.
    Deconv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Concat(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    SoftDice {
        prob: Var,
        truth: Var,
        numer: f64,
        denom: f64,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample { .. } => "upsample",
            Op::Concat(..) => "concat",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::SoftDice { .. } => "soft_dice",
        }
    }

    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } | Op::Param(_) => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            }
            | Op::Deconv2d {
                input, weight, bias, ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Relu(a) | Op::Sigmoid(a) | Op::Scale(a, _) | Op::Sum(a) => vec![*a],
            Op::MaxPool2 { input, .. } | Op::Upsample { input, .. } => vec![*input],
            Op::Concat(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::SoftDice { prob, truth, .. } => vec![*prob, *truth],
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Leaf { .. } | Op::Param(_))
    }
}

pub struct TapeNode<'p, E: Element> {
    value: Cow<'p, Tensor<E>>,
    op: Op,
    requires_grad: bool,
}

impl<E: Element> TapeNode<'_, E> {
    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Numerically stable logistic function, clamped away from exact zero.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.max(f64::MIN_POSITIVE)
}

pub struct Tape<'p, E: Element = f32> {
    nodes: Vec<TapeNode<'p, E>>,
    params: Option<&'p ParamStore<E>>,
}

impl<E: Element> Default for Tape<'_, E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, E: Element> Tape<'p, E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: None,
        }
    }

    /// Tape whose [`Tape::param`] leaves borrow from `params`.
    pub fn with_params(params: &'p ParamStore<E>) -> Self {
        Tape {
            nodes: Vec::new(),
            params: Some(params),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TapeNode<'p, E> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `(1, 1, 1, 1)` node, widened to `f64`.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        Ok(self.value(v).item()?.to_f64())
    }

    fn push(&mut self, value: Cow<'p, Tensor<E>>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf { learnable } => *learnable,
            Op::Param(id) => self.params.map(|p| p.get(*id).learnable).unwrap_or(false),
            other => other.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(TapeNode {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_f64(&mut self, shape: Shape, values: &[f64], op: Op) -> Result<Var> {
        let t = Tensor::from_f64(shape, values)?;
        Ok(self.push(Cow::Owned(t), op))
    }

    /// Records an owned input. Learnable leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor<E>, learnable: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf { learnable })
    }

    /// Records a parameter borrowed from the store the tape was built with.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self
            .params
            .ok_or_else(|| Error::contract("tape has no parameter store"))?;
        if id.0 >= store.len() {
            return Err(Error::contract(format!("unknown parameter id {}", id.0)));
        }
        Ok(self.push(Cow::Borrowed(&store.get(id).value), Op::Param(id)))
    }

    fn f64s(&self, v: Var) -> Vec<f64> {
        self.value(v).to_f64_vec()
    }

    fn check_bias(&self, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, channels, 1, 1) {
                return Err(Error::dim(format!(
                    "bias shape {bs}, expected (1, {channels}, 1, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Cross-correlation of `input` (N, C, H, W) with `weight` (O, C, k, k).
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if ws.height != ws.width {
            return Err(Error::dim(format!("non-square kernel {ws}")));
        }
        if ws.channels != xs.channels {
            return Err(Error::dim(format!(
                "conv2d: input has {} channels, kernel expects {}",
                xs.channels, ws.channels
            )));
        }
        self.check_bias(bias, ws.batch)?;
        let geom = ConvGeom::new(xs.channels, xs.height, xs.width, ws.batch, ws.height, stride, pad)?;
        let mut y = kernels::conv_forward(&self.f64s(input), xs.batch, &self.f64s(weight), &geom);
        if let Some(b) = bias {
            kernels::add_bias(&mut y, &self.f64s(b), xs.batch, geom.out_plane());
        }
        let shape = Shape::new(xs.batch, geom.out_ch, geom.out_h, geom.out_w);
        self.push_f64(
            shape,
            &y,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    /// Transposed convolution of `input` (N, C, H, W) with `weight` (C, O, k, k).
    ///
    /// Output size per axis is `stride * (in - 1) + k - 2 * pad`.
    pub fn deconv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if ws.height != ws.width {
            return Err(Error::dim(format!("non-square kernel {ws}")));
        }
        if ws.batch != xs.channels {
            return Err(Error::dim(format!(
                "deconv2d: input has {} channels, kernel expects {}",
                xs.channels, ws.batch
            )));
        }
        if stride == 0 {
            return Err(Error::dim("deconv2d: stride must be >= 1"));
        }
        let k = ws.height;
        let span_h = stride * (xs.height - 1) + k;
        let span_w = stride * (xs.width - 1) + k;
        if span_h <= 2 * pad || span_w <= 2 * pad {
            return Err(Error::dim(format!("deconv2d: padding {pad} too large")));
        }
        let (oh, ow) = (span_h - 2 * pad, span_w - 2 * pad);
        self.check_bias(bias, ws.channels)?;
        let geom = ConvGeom::new(ws.channels, oh, ow, xs.channels, k, stride, pad)?;
        debug_assert_eq!((geom.out_h, geom.out_w), (xs.height, xs.width));
        let mut y = kernels::conv_input_grad(&self.f64s(weight), &self.f64s(input), xs.batch, &geom);
        if let Some(b) = bias {
            kernels::add_bias(&mut y, &self.f64s(b), xs.batch, oh * ow);
        }
        let shape = Shape::new(xs.batch, ws.channels, oh, ow);
        self.push_f64(
            shape,
            &y,
            Op::Deconv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let zero = E::default();
        let y = self.value(input).map(|v| if v > zero { v } else { zero });
        self.push(Cow::Owned(y), Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let y = self.value(input).map(|v| E::from_f64(sigmoid(v.to_f64())));
        self.push(Cow::Owned(y), Op::Sigmoid(input))
    }

    /// 2x2 max pooling with stride 2; H and W must be even.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.height % 2 != 0 || s.width % 2 != 0 {
            return Err(Error::dim(format!("max_pool2 needs even H and W, got {s}")));
        }
        let (y, argmax) =
            kernels::max_pool2(&self.f64s(input), s.batch * s.channels, s.height, s.width);
        let shape = Shape::new(s.batch, s.channels, s.height / 2, s.width / 2);
        self.push_f64(shape, &y, Op::MaxPool2 { input, argmax })
    }

    /// Nearest-neighbour upsampling by `factor`.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::dim("upsample factor must be >= 1"));
        }
        let s = self.shape(input);
        let y = kernels::upsample_nearest(
            &self.f64s(input),
            s.batch * s.channels,
            s.height,
            s.width,
            factor,
        );
        let shape = Shape::new(s.batch, s.channels, s.height * factor, s.width * factor);
        self.push_f64(shape, &y, Op::Upsample { input, factor })
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.batch, sa.height, sa.width) != (sb.batch, sb.height, sb.width) {
            return Err(Error::dim(format!("concat: {sa} vs {sb}")));
        }
        let plane = sa.plane();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(sa.numel() + sb.numel());
        for n in 0..sa.batch {
            let ca = sa.channels * plane;
            let cb = sb.channels * plane;
            out.extend_from_slice(&va[n * ca..(n + 1) * ca]);
            out.extend_from_slice(&vb[n * cb..(n + 1) * cb]);
        }
        let t = Tensor::from_vec(sa.with_channels(sa.channels + sb.channels), out)?;
        Ok(self.push(Cow::Owned(t), Op::Concat(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(format!("{what}: {sa} vs {sb}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "add")?;
        let v: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x.to_f64() + y.to_f64())
            .collect();
        self.push_f64(s, &v, Op::Add(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape(a, b, "mul")?;
        let v: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x.to_f64() * y.to_f64())
            .collect();
        self.push_f64(s, &v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).map(|v| E::from_f64(v.to_f64() * c));
        self.push(Cow::Owned(y), Op::Scale(a, c))
    }

    /// Sum of all elements as a scalar-shaped node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        self.push(Cow::Owned(Tensor::scalar(E::from_f64(s))), Op::Sum(a))
    }

    /// Soft Dice loss `1 - (2 sum(p q) + eps) / (sum(p^2) + sum(q^2) + eps)`.
    pub fn soft_dice(&mut self, prob: Var, truth: Var) -> Result<Var> {
        self.same_shape(prob, truth, "soft_dice")?;
        let (p, q) = (self.value(prob).data(), self.value(truth).data());
        let (mut pq, mut pp, mut qq) = (0.0, 0.0, 0.0);
        for (a, b) in p.iter().zip(q) {
            let (a, b) = (a.to_f64(), b.to_f64());
            pq += a * b;
            pp += a * a;
            qq += b * b;
        }
        let numer = 2.0 * pq + DICE_SMOOTH;
        let denom = pp + qq + DICE_SMOOTH;
        let loss = 1.0 - numer / denom;
        Ok(self.push(
            Cow::Owned(Tensor::scalar(E::from_f64(loss))),
            Op::SoftDice {
                prob,
                truth,
                numer,
                denom,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Owned learnable leaves get their gradient added into their own grad
    /// slot (so repeated calls accumulate). Parameter leaves are reported in
    /// the returned [`Gradients`] for [`ParamStore::accumulate`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a (1, 1, 1, 1) loss, got {ls}"
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if node.op.is_leaf() {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads)?;
        }

        let mut leaves = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let (learnable, param) = match node.op {
                Op::Leaf { learnable } => (learnable, None),
                Op::Param(id) => (node.requires_grad, Some(id)),
                _ => continue,
            };
            if !learnable {
                continue;
            }
            let g = grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            leaves.push(LeafGrad {
                var: Var(i),
                param,
                shape: node.value.shape(),
                grad: g,
            });
        }
        for lg in leaves.iter().filter(|l| l.param.is_none()) {
            if let Cow::Owned(t) = &mut self.nodes[lg.var.0].value {
                t.accumulate_grad(&lg.grad)?;
            }
        }
        Ok(Gradients { leaves })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf { .. } | Op::Param(_) => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let batch = self.shape(*input).batch;
                if needs(*weight) {
                    send(
                        *weight,
                        kernels::conv_weight_grad(&self.f64s(*input), g, batch, geom),
                    );
                }
                if let Some(b) = bias {
                    send(*b, kernels::channel_sums(g, batch, geom.out_ch, geom.out_plane()));
                }
                if needs(*input) {
                    send(
                        *input,
                        kernels::conv_input_grad(&self.f64s(*weight), g, batch, geom),
                    );
                }
            }
            Op::Deconv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let batch = self.shape(*input).batch;
                if needs(*weight) {
                    send(
                        *weight,
                        kernels::conv_weight_grad(g, &self.f64s(*input), batch, geom),
                    );
                }
                if let Some(b) = bias {
                    send(
                        *b,
                        kernels::channel_sums(g, batch, geom.in_ch, geom.in_h * geom.in_w),
                    );
                }
                if needs(*input) {
                    send(
                        *input,
                        kernels::conv_forward(g, batch, &self.f64s(*weight), geom),
                    );
                }
            }
            Op::Relu(x) => {
                let zero = E::default();
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > zero { gv } else { 0.0 })
                    .collect();
                send(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| {
                        let y = y.to_f64();
                        gv * y * (1.0 - y)
                    })
                    .collect();
                send(*x, d);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut d = vec![0.0; self.value(*input).numel()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    d[a as usize] += gv;
                }
                send(*input, d);
            }
            Op::Upsample { input, factor } => {
                let s = self.shape(*input);
                send(
                    *input,
                    kernels::upsample_nearest_grad(g, s.batch * s.channels, s.height, s.width, *factor),
                );
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let plane = sa.plane();
                let (ca, cb) = (sa.channels * plane, sb.channels * plane);
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for n in 0..sa.batch {
                    let base = n * (ca + cb);
                    ga.extend_from_slice(&g[base..base + ca]);
                    gb.extend_from_slice(&g[base + ca..base + ca + cb]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = self.f64s(*b).iter().zip(g).map(|(v, gv)| v * gv).collect();
                    send(*a, d);
                }
                if needs(*b) {
                    let d = self.f64s(*a).iter().zip(g).map(|(v, gv)| v * gv).collect();
                    send(*b, d);
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::SoftDice {
                prob,
                truth,
                numer,
                denom,
            } => {
                // d/dp_i of -(N/D) = -(2 q_i D - 2 p_i N) / D^2, symmetric in q.
                let (p, q) = (self.f64s(*prob), self.f64s(*truth));
                let scale = -g[0] / (denom * denom);
                if needs(*prob) {
                    let d = p
                        .iter()
                        .zip(&q)
                        .map(|(pi, qi)| scale * (2.0 * qi * denom - 2.0 * pi * numer))
                        .collect();
                    send(*prob, d);
                }
                if needs(*truth) {
                    let d = p
                        .iter()
                        .zip(&q)
                        .map(|(pi, qi)| scale * (2.0 * pi * denom - 2.0 * qi * numer))
                        .collect();
                    send(*truth, d);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LeafGrad {
    pub var: Var,
    pub param: Option<ParamId>,
    pub shape: Shape,
    pub grad: Vec<f64>,
}

/// Gradients of one backward sweep, one entry per learnable leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    leaves: Vec<LeafGrad>,
}

impl Gradients {
    pub fn leaves(&self) -> &[LeafGrad] {
        &self.leaves
    }

    pub fn leaves_mut(&mut self) -> &mut [LeafGrad] {
        &mut self.leaves
    }

    /// Gradient with respect to a learnable leaf; `None` for anything else.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves
            .iter()
            .find(|l| l.var == v)
            .map(|l| l.grad.as_slice())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.leaves
            .iter()
            .filter_map(|l| l.param.map(|p| (p, l.grad.as_slice())))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.param_grads().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(values: &[f32]) -> Tensor<f32> {
        Tensor::from_vec([1, 1, 1, values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[1.0, -2.0, 3.0]), true);
        let l = tape.sum(w);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(tape.value(w).grad().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gives_twice_w() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[1.0, 2.0, 3.0, 4.0]), true);
        let sq = tape.mul(w, w).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn detached_leaf_gets_zero() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[1.0, 2.0]), true);
        let x = tape.leaf(t(&[3.0, 4.0]), false);
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[0.0, 0.0]);
        assert_eq!(tape.value(w).grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[1.0, 2.0]), true);
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates_exactly() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(t(&[0.3, -1.7]), true);
        let sq = tape.mul(w, w).unwrap();
        let l = tape.sum(sq);
        tape.backward(l).unwrap();
        let once = tape.value(w).grad().unwrap().to_vec();
        tape.backward(l).unwrap();
        let twice = tape.value(w).grad().unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn relu_subgradient_zero_at_zero() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(t(&[-1.0, 0.0, 2.0]), true);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        let lo = sigmoid(-1000.0);
        assert!(lo > 0.0 && lo <= 1e-300);
        assert!(sigmoid(1000.0) <= 1.0);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let h = 1e-5;
        let fd = (sigmoid(h) - sigmoid(-h)) / (2.0 * h);
        assert!((fd - 0.25).abs() < 1e-9);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0), true);
        let y = tape.sigmoid(x);
        let g = tape.backward(y).unwrap();
        assert!((g.wrt(x).unwrap()[0] - fd).abs() < 1e-9);
    }

    #[test]
    fn param_leaves_report_through_gradients() {
        let mut store = ParamStore::<f32>::new();
        let a = store.add("a", t(&[1.0, 2.0])).unwrap();
        let b = store.add("b", t(&[5.0])).unwrap();
        let grads = {
            let mut tape = Tape::with_params(&store);
            let va = tape.param(a).unwrap();
            let sq = tape.mul(va, va).unwrap();
            let l = tape.sum(sq);
            tape.backward(l).unwrap()
        };
        store.accumulate(&grads).unwrap();
        assert_eq!(store.value(a).grad().unwrap(), &[2.0, 4.0]);
        // never placed on the tape: zero slot
        assert_eq!(store.value(b).grad().unwrap(), &[0.0]);
    }
}
