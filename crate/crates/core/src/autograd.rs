//! Single-use reverse-mode trace.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse insertion order,
//! which is a valid reverse topological order because inputs always precede
//! their consumers. Gradients are accumulated in that fixed order, so the
//! result is bit-for-bit reproducible.

use std::collections::BTreeMap;

use crate::anchors::Anchor;
use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<T> },
    Relu(Var),
    Add(Var, Var),
    Crop(Var, Anchor),
    Slice(Var, usize, usize),
    Concat(Vec<Var>),
    AdaptivePool(Var),
    GlobalPool(Var),
    Linear { x: Var, w: Var, b: Var, out: usize },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
    WeightedSum(Vec<(Var, T)>),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// Whether any parameter or tracked input feeds this node.
    tracked: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A tape that only evaluates: no backward buffers are kept and
    /// [`backward`](Self::backward) is refused.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
            consumed: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked: tracked && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Registers a trainable parameter value under `id`.
    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        let mut v = value.clone();
        v.clear_grad();
        self.push(v, Op::Param(id), true)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(w), self.value(b), stride)?;
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        let cols = if self.grad_enabled { out.cols } else { Vec::new() };
        Ok(self.push(
            out.value,
            Op::Conv {
                x,
                w,
                b,
                geom: out.geom,
                cols,
            },
            tracked,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        let tracked = self.tracked(x);
        self.push(y, Op::Relu(x), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(y, Op::Add(a, b), tracked))
    }

    pub fn crop_spatial(&mut self, x: Var, a: Anchor) -> Result<Var> {
        let y = ops::crop_spatial(self.value(x), a)?;
        let tracked = self.tracked(x);
        Ok(self.push(y, Op::Crop(x, a), tracked))
    }

    pub fn slice_channels(&mut self, x: Var, lo: usize, hi: usize) -> Result<Var> {
        let y = ops::slice_channels(self.value(x), lo, hi)?;
        let tracked = self.tracked(x);
        Ok(self.push(y, Op::Slice(x, lo, hi), tracked))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels(&refs)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(y, Op::Concat(parts.to_vec()), tracked))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::adaptive_avg_pool(self.value(x), out_h, out_w)?;
        let tracked = self.tracked(x);
        Ok(self.push(y, Op::AdaptivePool(x), tracked))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = ops::global_avg_pool(self.value(x));
        let tracked = self.tracked(x);
        self.push(y, Op::GlobalPool(x), tracked)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var, out_features: usize) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), self.value(b), out_features)?;
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        Ok(self.push(
            y,
            Op::Linear {
                x,
                w,
                b,
                out: out_features,
            },
            tracked,
        ))
    }

    /// Mean cross-entropy over the batch as a `1x1x1x1` node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::full(Shape::new(1, 1, 1, 1)?, loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// `sum_i w_i * x_i` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let (first, _) = terms
            .first()
            .ok_or_else(|| Error::shape("weighted_sum needs at least one term"))?;
        let shape = self.shape(*first);
        let mut acc = vec![T::zero(); shape.numel()];
        for &(v, wgt) in terms {
            if self.shape(v) != shape {
                return Err(Error::shape(format!("weighted_sum: {} vs {shape}", self.shape(v))));
            }
            acc.iter_mut().zip(self.value(v).data()).for_each(|(a, &x)| *a += wgt * x);
        }
        let tracked = terms.iter().any(|&(v, _)| self.tracked(v));
        let y = Tensor::new(shape, acc)?;
        Ok(self.push(y, Op::WeightedSum(terms.to_vec()), tracked))
    }

    /// Sum of all elements as a `1x1x1x1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let tracked = self.tracked(x);
        self.push(
            Tensor::full(Shape::new(1, 1, 1, 1).expect("unit shape"), total),
            Op::Sum(x),
            tracked,
        )
    }

    /// Propagates `d root / d node` back through the trace, seeding the root
    /// with ones. A trace can be differentiated once.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if !self.grad_enabled {
            return Err(Error::usage("backward called on an inference-only tape"));
        }
        if self.consumed {
            return Err(Error::usage("backward already ran on this trace"));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.nodes[root.0].value.shape().numel()]);
        let mut leaves = BTreeMap::new();
        let mut params: BTreeMap<ParamId, Vec<T>> = BTreeMap::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let nodes = &self.nodes;
            let mut send = |v: Var, gv: Vec<T>| {
                if !nodes[v.0].tracked {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&gv).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(gv),
                }
            };
            match &node.op {
                Op::Leaf => {
                    leaves.insert(Var(i), g);
                }
                Op::Param(id) => match params.get_mut(id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => {
                        params.insert(*id, g);
                    }
                },
                Op::Conv { x, w, b, geom, cols } => {
                    let batch = nodes[x.0].value.shape().n;
                    let cg = ops::conv2d_backward(
                        &g,
                        geom,
                        batch,
                        cols,
                        nodes[w.0].value.data(),
                        nodes[x.0].tracked,
                    );
                    if let Some(gx) = cg.input {
                        send(*x, gx);
                    }
                    send(*w, cg.weight);
                    send(*b, cg.bias);
                }
                Op::Relu(x) => send(*x, ops::relu_backward(&g, node.value.data())),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Crop(x, a) => send(*x, ops::crop_spatial_backward(&g, nodes[x.0].value.shape(), *a)),
                Op::Slice(x, lo, hi) => {
                    send(*x, ops::slice_channels_backward(&g, nodes[x.0].value.shape(), *lo, *hi))
                }
                Op::Concat(parts) => {
                    let shapes: Vec<Shape> = parts.iter().map(|p| nodes[p.0].value.shape()).collect();
                    for (p, gp) in parts.iter().zip(ops::concat_channels_backward(&g, &shapes)) {
                        send(*p, gp);
                    }
                }
                Op::AdaptivePool(x) => {
                    let out = node.value.shape();
                    send(
                        *x,
                        ops::adaptive_avg_pool_backward(&g, nodes[x.0].value.shape(), out.h, out.w),
                    )
                }
                Op::GlobalPool(x) => send(*x, ops::global_avg_pool_backward(&g, nodes[x.0].value.shape())),
                Op::Linear { x, w, b, out } => {
                    let lg = ops::linear_backward(
                        &g,
                        &nodes[x.0].value,
                        nodes[w.0].value.data(),
                        *out,
                        nodes[x.0].tracked,
                    );
                    if let Some(gx) = lg.input {
                        send(*x, gx);
                    }
                    send(*w, lg.weight);
                    send(*b, lg.bias);
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    send(*logits, ops::softmax_cross_entropy_backward(g[0], probs, labels));
                }
                Op::WeightedSum(terms) => {
                    for &(v, wgt) in terms {
                        send(v, g.iter().map(|&x| x * wgt).collect());
                    }
                }
                Op::Sum(x) => {
                    let n = nodes[x.0].value.shape().numel();
                    send(*x, vec![g[0]; n]);
                }
            }
        }
        Ok(Gradients { leaves, params })
    }
}

/// Result of one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: BTreeMap<Var, Vec<T>>,
    params: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a tracked input leaf, if the root depended on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Parameter gradients in ascending id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(dims: [usize; 4]) -> Tensor<f64> {
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.input(iota([1, 2, 3, 3]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0; 18]);
    }

    #[test]
    fn crop_sum_gradient_is_indicator() {
        let mut tape = Tape::new();
        let x = tape.input(iota([1, 1, 4, 4]));
        let a = Anchor { x1: 1, y1: 0, x2: 3, y2: 2 };
        let c = tape.crop_spatial(x, a).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        for (i, &v) in g.wrt(x).unwrap().iter().enumerate() {
            let inside = (0..2).contains(&(i / 4)) && (1..3).contains(&(i % 4));
            assert_eq!(v, if inside { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn add_passes_upstream_to_both() {
        let mut tape = Tape::new();
        let a = tape.input(iota([1, 1, 1, 2]));
        let b = tape.input(iota([1, 1, 1, 2]));
        let y = tape.add(a, b).unwrap();
        let z = tape.weighted_sum(&[(y, 3.0)]).unwrap();
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).unwrap(), &[3.0, 3.0]);
        assert_eq!(g.wrt(b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn second_backward_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.input(iota([1, 1, 2, 2]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
        let mut inf = Tape::<f64>::inference();
        let x = inf.input(iota([1, 1, 2, 2]));
        let s = inf.sum(x);
        assert!(matches!(inf.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(iota([1, 1, 2, 2]));
        let y = tape.input(iota([1, 1, 2, 2]));
        let z = tape.add(x, y).unwrap();
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).is_none());
        assert!(g.wrt(y).is_some());
    }
}
