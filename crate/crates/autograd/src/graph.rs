//! Reverse-mode tape.
//!
//! Every backward rule is written in terms of graph ops, so gradients returned
//! with `create_graph = true` are themselves differentiable. Gradient-penalty
//! critics need exactly that: the penalty depends on an input gradient and is
//! then differentiated with respect to the critic weights.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::conv::{self, Conv2dSpec};
use crate::tensor::{self, Tensor};
use crate::Float;

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Rc<Tensor<T>>),
    Scale(usize, T),
    AddScalar(usize),
    Powf(usize, T),
    Exp(usize),
    Ln(usize),
    Sigmoid(usize),
    LeakyRelu(usize, T),
    Abs(usize),
    Clamp(usize, T, T),
    SafeRecip(usize),
    SafeSqrt(usize),
    Reshape(usize),
    SumAll(usize),
    BroadcastScalar(usize),
    SumAxis(usize, usize),
    ExpandAxis(usize, usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Softmax(usize),
    Conv { x: usize, w: usize, spec: Conv2dSpec },
    ConvInputGrad { dy: usize, w: usize, spec: Conv2dSpec },
    ConvWeightGrad { x: usize, dy: usize, spec: Conv2dSpec },
    Concat(Vec<usize>, usize),
    Narrow { x: usize, axis: usize, start: usize },
    Pad { x: usize, axis: usize, start: usize },
    ReverseGrad(usize, T),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Conv { x, w, .. } => vec![*x, *w],
            ConvInputGrad { dy, w, .. } => vec![*dy, *w],
            ConvWeightGrad { x, dy, .. } => vec![*x, *dy],
            Concat(parts, _) => parts.clone(),
            MulConst(a, _)
            | Scale(a, _)
            | AddScalar(a)
            | Powf(a, _)
            | Exp(a)
            | Ln(a)
            | Sigmoid(a)
            | LeakyRelu(a, _)
            | Abs(a)
            | Clamp(a, _, _)
            | SafeRecip(a)
            | SafeSqrt(a)
            | Reshape(a)
            | SumAll(a)
            | BroadcastScalar(a)
            | SumAxis(a, _)
            | ExpandAxis(a, _)
            | Softmax(a)
            | ReverseGrad(a, _) => vec![*a],
            Narrow { x, .. } | Pad { x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation tape. Build one per forward/backward cycle.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    id: usize,
    graph: &'g Graph<T>,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients never flow into.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf(t, false)
    }

    /// A leaf that gradients can be requested for.
    pub fn param(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf(t, true)
    }

    fn leaf(&self, t: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
            graph: self,
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.recording.get() && op.parents().iter().any(|&p| nodes[p].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
            graph: self,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { id, graph: self }
    }

    /// Gradients of `output` (seeded with ones) with respect to each of `wrt`.
    ///
    /// `None` marks inputs that `output` does not depend on. With
    /// `create_graph` the returned gradients are recorded on the tape and can be
    /// differentiated again; otherwise they are plain constants.
    pub fn grad<'g>(&'g self, output: Var<'g, T>, wrt: &[Var<'g, T>], create_graph: bool) -> Vec<Option<Var<'g, T>>> {
        assert!(std::ptr::eq(output.graph, self), "output belongs to another graph");
        let last = output.id;
        // reaches[i]: node i lies on a path from some wrt var
        let mut reaches = vec![false; last + 1];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.id <= last && nodes[w.id].requires_grad {
                    reaches[w.id] = true;
                }
            }
            for i in 0..=last {
                if !reaches[i] && nodes[i].requires_grad {
                    reaches[i] = nodes[i].op.parents().iter().any(|&p| reaches[p]);
                }
            }
        }
        let mut grads: Vec<Option<usize>> = vec![None; last + 1];
        if reaches[last] {
            let seed = Tensor::ones(self.value_of(last).shape());
            grads[last] = Some(self.constant(seed).id);
        }
        let prev = self.recording.replace(create_graph);
        for i in (0..=last).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let parents = op.parents();
            let needed: Vec<bool> = parents.iter().map(|&p| reaches[p]).collect();
            if !needed.iter().any(|&n| n) {
                continue;
            }
            let contributions = self.backward_rule(i, &op, self.var(g), &needed);
            for (p, gp) in parents.iter().zip(contributions) {
                if let (true, Some(gp)) = (reaches[*p], gp) {
                    grads[*p] = Some(match grads[*p] {
                        Some(acc) => self.var(acc).add(gp).id,
                        None => gp.id,
                    });
                }
            }
        }
        self.recording.set(prev);
        wrt.iter()
            .map(|w| grads.get(w.id).copied().flatten().map(|id| self.var(id)))
            .collect()
    }

    /// One optional gradient per parent of node `i`, in `Op::parents` order.
    fn backward_rule<'g>(&'g self, i: usize, op: &Op<T>, g: Var<'g, T>, needed: &[bool]) -> Vec<Option<Var<'g, T>>> {
        let v = |id| self.var(id);
        let shape_of = |id| self.value_of(id).shape().to_vec();
        match op {
            Op::Leaf => vec![],
            Op::Add(_, _) => vec![Some(g), Some(g)],
            Op::Sub(_, _) => vec![Some(g), Some(g.scale(-1.0))],
            Op::Mul(a, b) => vec![needed[0].then(|| g.mul(v(*b))), needed[1].then(|| g.mul(v(*a)))],
            Op::MulConst(_, c) => vec![Some(g.mul_const_rc(c.clone()))],
            Op::Scale(_, c) => vec![Some(g.scale_t(*c))],
            Op::AddScalar(_) => vec![Some(g)],
            Op::Powf(a, p) => {
                let d = v(*a).powf_t(*p - T::one()).scale_t(*p);
                vec![Some(g.mul(d))]
            }
            Op::Exp(_) => vec![Some(g.mul(v(i)))],
            Op::Ln(a) => vec![Some(g.mul(v(*a).powf(-1.0)))],
            Op::Sigmoid(_) => {
                let y = v(i);
                let dy = y.mul(y.scale(-1.0).add_scalar(1.0));
                vec![Some(g.mul(dy))]
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.value_of(*a).map(|x| if x > T::zero() { T::one() } else { *slope });
                vec![Some(g.mul_const(mask))]
            }
            Op::Abs(a) => {
                let sign = self.value_of(*a).map(|x| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                vec![Some(g.mul_const(sign))]
            }
            Op::Clamp(a, lo, hi) => {
                let inside = self
                    .value_of(*a)
                    .map(|x| if x >= *lo && x <= *hi { T::one() } else { T::zero() });
                vec![Some(g.mul_const(inside))]
            }
            Op::SafeRecip(_) => {
                // d/dx 1/x = -1/x^2; zero where the forward value was clamped to 0
                let r = v(i);
                vec![Some(g.mul(r.mul(r)).scale(-1.0))]
            }
            Op::SafeSqrt(_) => {
                let r = v(i).safe_recip();
                vec![Some(g.mul(r).scale(0.5))]
            }
            Op::Reshape(a) => vec![Some(g.reshape(&shape_of(*a)))],
            Op::SumAll(a) => vec![Some(g.broadcast_scalar(&shape_of(*a)))],
            Op::BroadcastScalar(_) => vec![Some(g.sum())],
            Op::SumAxis(a, axis) => {
                let n = shape_of(*a)[*axis];
                vec![Some(g.expand_axis(*axis, n))]
            }
            Op::ExpandAxis(_, axis) => vec![Some(g.sum_axis(*axis))],
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (v(*a), v(*b), *ta, *tb);
                let ga = needed[0].then(|| {
                    if ta {
                        b.matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(b, false, !tb)
                    }
                });
                let gb = needed[1].then(|| {
                    if tb {
                        g.matmul_t(a, true, ta)
                    } else {
                        a.matmul_t(g, !ta, false)
                    }
                });
                vec![ga, gb]
            }
            Op::Softmax(_) => {
                let y = v(i);
                let n = *shape_of(i).last().unwrap();
                let axis = shape_of(i).len() - 1;
                let gy = g.mul(y);
                let s = gy.sum_axis(axis).expand_axis(axis, n);
                vec![Some(gy.sub(s.mul(y)))]
            }
            Op::Conv { x, w, spec } => {
                let xs = shape_of(*x);
                let ws = shape_of(*w);
                vec![
                    needed[0].then(|| g.conv2d_input_grad(v(*w), *spec, (xs[2], xs[3]))),
                    needed[1].then(|| v(*x).conv2d_weight_grad(g, *spec, (ws[2], ws[3]))),
                ]
            }
            Op::ConvInputGrad { dy, w, spec } => {
                // z = convT(dy, w): dz -> d(dy) = conv(dz, w), d(w) = wgrad(dz, dy)
                let ws = shape_of(*w);
                vec![
                    needed[0].then(|| g.conv2d(v(*w), *spec)),
                    needed[1].then(|| g.conv2d_weight_grad(v(*dy), *spec, (ws[2], ws[3]))),
                ]
            }
            Op::ConvWeightGrad { x, dy, spec } => {
                // z = wgrad(x, dy): d(x) = convT(dy, dz), d(dy) = conv(x, dz)
                let xs = shape_of(*x);
                vec![
                    needed[0].then(|| v(*dy).conv2d_input_grad(g, *spec, (xs[2], xs[3]))),
                    needed[1].then(|| v(*x).conv2d(g, *spec)),
                ]
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                parts
                    .iter()
                    .zip(needed)
                    .map(|(p, &need)| {
                        let len = shape_of(*p)[*axis];
                        let out = need.then(|| g.narrow(*axis, start, len));
                        start += len;
                        out
                    })
                    .collect()
            }
            Op::Narrow { x, axis, start } => {
                let total = shape_of(*x)[*axis];
                vec![Some(g.pad_axis(*axis, *start, total))]
            }
            Op::Pad { x, axis, start } => {
                let len = shape_of(*x)[*axis];
                vec![Some(g.narrow(*axis, *start, len))]
            }
            Op::ReverseGrad(_, lambda) => vec![Some(g.scale_t(-*lambda))],
        }
    }
}

#[allow(clippy::should_implement_trait)]
impl<'g, T: Float> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant((*self.value()).clone())
    }

    fn same_graph(&self, other: &Var<'g, T>) {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        self.graph.push(value, op)
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph.push(v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph.push(v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.graph.push(v, Op::Mul(self.id, other.id))
    }

    /// Elementwise product with a tensor that is not part of the tape.
    pub fn mul_const(self, c: Tensor<T>) -> Var<'g, T> {
        self.mul_const_rc(Rc::new(c))
    }

    fn mul_const_rc(self, c: Rc<Tensor<T>>) -> Var<'g, T> {
        let v = self.value().zip_map(&c, |a, b| a * b);
        self.unary(v, Op::MulConst(self.id, c))
    }

    pub fn scale(self, c: f64) -> Var<'g, T> {
        self.scale_t(T::from_f64(c))
    }

    fn scale_t(self, c: T) -> Var<'g, T> {
        let v = self.value().map(|a| a * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g, T> {
        let c = T::from_f64(c);
        let v = self.value().map(|a| a + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn powf(self, p: f64) -> Var<'g, T> {
        self.powf_t(T::from_f64(p))
    }

    fn powf_t(self, p: T) -> Var<'g, T> {
        let v = self.value().map(|a| a.powf(p));
        self.unary(v, Op::Powf(self.id, p))
    }

    pub fn sqrt(self) -> Var<'g, T> {
        self.powf(0.5)
    }

    pub fn square(self) -> Var<'g, T> {
        self.mul(self)
    }

    pub fn exp(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.exp());
        self.unary(v, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.ln());
        self.unary(v, Op::Ln(self.id))
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        let v = self.value().map(|a| T::one() / (T::one() + (-a).exp()));
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g, T> {
        let s = T::from_f64(slope);
        let v = self.value().map(|a| if a > T::zero() { a } else { a * s });
        self.unary(v, Op::LeakyRelu(self.id, s))
    }

    pub fn relu(self) -> Var<'g, T> {
        self.leaky_relu(0.0)
    }

    pub fn abs(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.abs());
        self.unary(v, Op::Abs(self.id))
    }

    /// Limits values to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g, T> {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        let v = self.value().map(|a| a.max(lo).min(hi));
        self.unary(v, Op::Clamp(self.id, lo, hi))
    }

    /// `1/x`, with `1/0` defined as `0` (and a zero derivative there).
    pub fn safe_recip(self) -> Var<'g, T> {
        let v = self
            .value()
            .map(|a| if a == T::zero() { T::zero() } else { T::one() / a });
        self.unary(v, Op::SafeRecip(self.id))
    }

    /// `sqrt(x)` whose derivative at `x = 0` is taken as 0 rather than infinity.
    pub fn safe_sqrt(self) -> Var<'g, T> {
        let v = self.value().map(|a| a.sqrt());
        self.unary(v, Op::SafeSqrt(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let v = (*self.value()).clone().reshape(shape);
        self.unary(v, Op::Reshape(self.id))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'g, T> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    fn broadcast_scalar(self, shape: &[usize]) -> Var<'g, T> {
        let v = Tensor::full(shape, self.value().item());
        self.unary(v, Op::BroadcastScalar(self.id))
    }

    /// Sum over `axis`, keeping it with length 1.
    pub fn sum_axis(self, axis: usize) -> Var<'g, T> {
        let v = tensor::sum_axis(&self.value(), axis);
        self.unary(v, Op::SumAxis(self.id, axis))
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g, T> {
        let n = self.value().shape()[axis] as f64;
        self.sum_axis(axis).scale(1.0 / n)
    }

    /// Repeats a length-1 `axis` `n` times.
    pub fn expand_axis(self, axis: usize, n: usize) -> Var<'g, T> {
        let v = tensor::expand_axis(&self.value(), axis, n);
        self.unary(v, Op::ExpandAxis(self.id, axis))
    }

    /// Multiplies by `s`, broadcasting `s` along the length-1 `axis`.
    pub fn mul_bcast(self, s: Var<'g, T>, axis: usize) -> Var<'g, T> {
        let n = self.value().shape()[axis];
        self.mul(s.expand_axis(axis, n))
    }

    /// Adds a per-channel bias `b: [C]` to `self: [B, C, ...]`.
    pub fn add_channel_bias(self, b: Var<'g, T>) -> Var<'g, T> {
        let shape = self.shape();
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let b = b
            .reshape(&[1, c, 1])
            .expand_axis(2, inner)
            .expand_axis(0, shape[0])
            .reshape(&shape);
        self.add(b)
    }

    pub fn matmul(self, other: Var<'g, T>) -> Var<'g, T> {
        self.matmul_t(other, false, false)
    }

    /// Batched `op(self) * op(other)` over the last two axes.
    pub fn matmul_t(self, other: Var<'g, T>, ta: bool, tb: bool) -> Var<'g, T> {
        self.same_graph(&other);
        let v = tensor::matmul(&self.value(), &other.value(), ta, tb);
        self.graph.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'g, T> {
        let v = tensor::softmax_last(&self.value());
        self.unary(v, Op::Softmax(self.id))
    }

    pub fn conv2d(self, w: Var<'g, T>, spec: Conv2dSpec) -> Var<'g, T> {
        self.same_graph(&w);
        let v = conv::conv2d(&self.value(), &w.value(), spec);
        self.graph.push(
            v,
            Op::Conv {
                x: self.id,
                w: w.id,
                spec,
            },
        )
    }

    /// Transposed convolution of `self` by `w` (laid out as the forward conv
    /// weight `[C_self, C_out, kh, kw]`) producing spatial size `out_hw`.
    pub fn conv2d_input_grad(self, w: Var<'g, T>, spec: Conv2dSpec, out_hw: (usize, usize)) -> Var<'g, T> {
        self.same_graph(&w);
        let v = conv::conv2d_input_grad(&self.value(), &w.value(), spec, out_hw);
        self.graph.push(
            v,
            Op::ConvInputGrad {
                dy: self.id,
                w: w.id,
                spec,
            },
        )
    }

    /// Weight gradient of a convolution whose input is `self` and output gradient `dy`.
    pub fn conv2d_weight_grad(self, dy: Var<'g, T>, spec: Conv2dSpec, kernel_hw: (usize, usize)) -> Var<'g, T> {
        self.same_graph(&dy);
        let v = conv::conv2d_weight_grad(&self.value(), &dy.value(), spec, kernel_hw);
        self.graph.push(
            v,
            Op::ConvWeightGrad {
                x: self.id,
                dy: dy.id,
                spec,
            },
        )
    }

    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
        let first = parts[0];
        parts.iter().for_each(|p| first.same_graph(p));
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let v = tensor::concat(&refs, axis);
        first
            .graph
            .push(v, Op::Concat(parts.iter().map(|p| p.id).collect(), axis))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, T> {
        let v = tensor::narrow(&self.value(), axis, start, len);
        self.unary(
            v,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        )
    }

    fn pad_axis(self, axis: usize, start: usize, total: usize) -> Var<'g, T> {
        let v = tensor::pad_axis(&self.value(), axis, start, total);
        self.unary(
            v,
            Op::Pad {
                x: self.id,
                axis,
                start,
            },
        )
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda` on the way back.
    pub fn reverse_grad(self, lambda: f64) -> Var<'g, T> {
        let v = (*self.value()).clone();
        self.unary(v, Op::ReverseGrad(self.id, T::from_f64(lambda)))
    }
}
