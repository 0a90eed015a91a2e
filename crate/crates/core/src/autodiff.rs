//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied to its nodes in execution
//! order, so node ids are already a topological order. [`Graph::backward`]
//! consumes the graph, walks it in reverse, and returns the gradient of a
//! scalar loss with respect to every leaf created with [`Graph::leaf`].
//! Nodes created with [`Graph::constant`] or [`Graph::detach`] never receive
//! gradient, and nothing flows through them.

use crate::error::TensorError;
use crate::tensor::{
    broadcast_offsets, broadcast_shape, matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor,
};

type Res<T> = Result<T, TensorError>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive operations, addressable by value for generic drivers such as
/// gradient checks over the whole operation set.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Square,
    Sum { axis: usize },
    Mean { axis: usize },
    SumAll,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Broadcast { shape: Vec<usize> },
    Transpose,
    Reshape { shape: Vec<usize> },
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Square(Var),
    Sum { input: Var, axis: usize, mean: bool },
    SumAll(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Broadcast(Var),
    Transpose(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Leaves that the loss does
    /// not depend on get an all-zero tensor; detached nodes get `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sums `grad` (laid out over `out_shape`) back onto `src_shape`.
fn reduce_to(grad: &[f64], src_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if src_shape == out_shape {
        return grad.to_vec();
    }
    let n: usize = src_shape.iter().product();
    let mut acc = vec![0.0; n];
    for (g, off) in grad.iter().zip(broadcast_offsets(src_shape, out_shape)) {
        acc[off] += g;
    }
    acc
}

fn expand(data: &[f64], src_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if src_shape == out_shape {
        return data.to_vec();
    }
    broadcast_offsets(src_shape, out_shape)
        .into_iter()
        .map(|off| data[off])
        .collect()
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value outside the differentiation graph.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Copy of `v` with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn apply(&mut self, prim: &Primitive, inputs: &[Var]) -> Res<Var> {
        let arg = |i: usize| -> Res<Var> {
            inputs.get(i).copied().ok_or(TensorError::Empty { op: "apply" })
        };
        match prim {
            Primitive::MatMul => self.matmul(arg(0)?, arg(1)?),
            Primitive::Add => self.add(arg(0)?, arg(1)?),
            Primitive::Sub => self.sub(arg(0)?, arg(1)?),
            Primitive::Mul => self.mul(arg(0)?, arg(1)?),
            Primitive::Div => self.div(arg(0)?, arg(1)?),
            Primitive::Neg => Ok(self.neg(arg(0)?)),
            Primitive::Exp => Ok(self.exp(arg(0)?)),
            Primitive::Log => self.log(arg(0)?),
            Primitive::Tanh => Ok(self.tanh(arg(0)?)),
            Primitive::Sigmoid => Ok(self.sigmoid(arg(0)?)),
            Primitive::Relu => Ok(self.relu(arg(0)?)),
            Primitive::Square => Ok(self.square(arg(0)?)),
            Primitive::Sum { axis } => self.sum(arg(0)?, *axis),
            Primitive::Mean { axis } => self.mean(arg(0)?, *axis),
            Primitive::SumAll => Ok(self.sum_all(arg(0)?)),
            Primitive::Concat { axis } => self.concat(inputs, *axis),
            Primitive::Slice { axis, start, end } => self.slice(arg(0)?, *axis, *start..*end),
            Primitive::Broadcast { shape } => self.broadcast(arg(0)?, shape),
            Primitive::Transpose => self.transpose(arg(0)?),
            Primitive::Reshape { shape } => self.reshape(arg(0)?, shape),
        }
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m,k] @ [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Res<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let grad = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b), grad))
    }

    pub fn transpose(&mut self, a: Var) -> Res<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                lhs: s,
                rhs: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let grad = self.any_grad(&[a]);
        Ok(self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(a), grad))
    }

    // ---- broadcasting binary ops ----------------------------------------

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Res<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::Shape {
            op: op_name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ea = expand(va, &sa, &out_shape);
            let eb = expand(vb, &sb, &out_shape);
            ea.iter().zip(&eb).map(|(&x, &y)| f(x, y)).collect()
        };
        let grad = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(out_shape, data), op, grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Res<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Res<Var> {
        if let Some(pos) = self.value(b).data().iter().position(|&v| v == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: format!("divisor is zero at flat index {pos}"),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    // ---- elementwise unary ---------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let grad = self.any_grad(&[a]);
        self.push(value, op, grad)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Res<Var> {
        if let Some(pos) = self.value(a).data().iter().position(|&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!(
                    "non-positive value {} at flat index {pos}",
                    self.value(a).data()[pos]
                ),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    // ---- reductions -----------------------------------------------------

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Res<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: if mean { "mean" } else { "sum" },
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for k in 0..n {
                let base = (o * n + k) * inner;
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        if mean {
            let scale = 1.0 / n as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let grad = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Sum {
                input: a,
                axis,
                mean,
            },
            grad,
        ))
    }

    /// Sum along `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Res<Var> {
        self.reduce_axis(a, axis, false)
    }

    /// Mean along `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Res<Var> {
        self.reduce_axis(a, axis, true)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let grad = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), grad)
    }

    // ---- shape manipulation ----------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Res<Var> {
        let first = *inputs.first().ok_or(TensorError::Empty { op: "concat" })?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v)[axis];
                let chunk = ext * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let grad = self.any_grad(inputs);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            grad,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, range: std::ops::Range<usize>) -> Res<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if range.start > range.end || range.end > shape[axis] {
            return Err(TensorError::Range {
                op: "slice",
                start: range.start,
                end: range.end,
                extent: shape[axis],
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let len = range.end - range.start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + range.start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let grad = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Slice {
                input: a,
                axis,
                start: range.start,
            },
            grad,
        ))
    }

    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Res<Var> {
        let src = self.shape(a).to_vec();
        match broadcast_shape(&src, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(TensorError::Shape {
                    op: "broadcast",
                    lhs: src,
                    rhs: shape.to_vec(),
                })
            }
        }
        let data = expand(self.value(a).data(), &src, shape);
        let grad = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), data),
            Op::Broadcast(a),
            grad,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Res<Var> {
        let value = self.value(a).reshape(shape)?;
        let grad = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), grad))
    }

    // ---- composites -----------------------------------------------------

    /// `x @ w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Res<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Multiply by a constant factor.
    pub fn scale(&mut self, a: Var, factor: f64) -> Res<Var> {
        let c = self.scalar(factor);
        self.mul(a, c)
    }

    // ---- reverse pass ---------------------------------------------------

    /// Gradient of the scalar `loss` with respect to every leaf. Consumes
    /// the graph.
    pub fn backward(self, loss: Var) -> Res<Gradients> {
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 || loss_shape.len() > 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::from_parts(loss_shape, vec![1.0]));
        }

        fn acc(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, g: Vec<f64>) {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => {
                    for (d, s) in t.data_mut().iter_mut().zip(g) {
                        *d += s;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor::from_parts(nodes[v.0].value.shape().to_vec(), g));
                }
            }
        }

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(gt) = grads[id].take() else { continue };
            let g = gt.data();
            let out = node.value.data();
            let out_shape = node.value.shape();
            let val = |v: Var| nodes[v.0].value.data();
            let shp = |v: Var| nodes[v.0].value.shape();
            match &node.op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = (shp(*a)[0], shp(*a)[1]);
                    let n = shp(*b)[1];
                    if nodes[a.0].requires_grad {
                        let ga = matmul_bt_raw(g, val(*b), m, n, k);
                        acc(&mut grads, &nodes, *a, ga);
                    }
                    if nodes[b.0].requires_grad {
                        let gb = matmul_at_raw(val(*a), g, m, k, n);
                        acc(&mut grads, &nodes, *b, gb);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (shp(*a)[0], shp(*a)[1]);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *a, reduce_to(g, shp(*a), out_shape));
                    acc(&mut grads, &nodes, *b, reduce_to(g, shp(*b), out_shape));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *a, reduce_to(g, shp(*a), out_shape));
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    acc(&mut grads, &nodes, *b, reduce_to(&neg, shp(*b), out_shape));
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].requires_grad {
                        let eb = expand(val(*b), shp(*b), out_shape);
                        let ga: Vec<f64> = g.iter().zip(&eb).map(|(x, y)| x * y).collect();
                        acc(&mut grads, &nodes, *a, reduce_to(&ga, shp(*a), out_shape));
                    }
                    if nodes[b.0].requires_grad {
                        let ea = expand(val(*a), shp(*a), out_shape);
                        let gb: Vec<f64> = g.iter().zip(&ea).map(|(x, y)| x * y).collect();
                        acc(&mut grads, &nodes, *b, reduce_to(&gb, shp(*b), out_shape));
                    }
                }
                Op::Div(a, b) => {
                    let eb = expand(val(*b), shp(*b), out_shape);
                    if nodes[a.0].requires_grad {
                        let ga: Vec<f64> = g.iter().zip(&eb).map(|(x, y)| x / y).collect();
                        acc(&mut grads, &nodes, *a, reduce_to(&ga, shp(*a), out_shape));
                    }
                    if nodes[b.0].requires_grad {
                        // d(a/b)/db = -(a/b)/b = -out/b
                        let gb: Vec<f64> = g
                            .iter()
                            .zip(out)
                            .zip(&eb)
                            .map(|((gv, o), bv)| -gv * o / bv)
                            .collect();
                        acc(&mut grads, &nodes, *b, reduce_to(&gb, shp(*b), out_shape));
                    }
                }
                Op::Neg(a) => acc(&mut grads, &nodes, *a, g.iter().map(|v| -v).collect()),
                Op::Exp(a) => {
                    let ga = g.iter().zip(out).map(|(x, y)| x * y).collect();
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Log(a) => {
                    let ga = g.iter().zip(val(*a)).map(|(x, y)| x / y).collect();
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g
                        .iter()
                        .zip(val(*a))
                        .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                        .collect();
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.iter().zip(val(*a)).map(|(x, y)| 2.0 * x * y).collect();
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Sum { input, axis, mean } => {
                    let (outer, n, inner) = split_axis(shp(*input), *axis);
                    let scale = if *mean { 1.0 / n as f64 } else { 1.0 };
                    let mut ga = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for k in 0..n {
                            let base = (o * n + k) * inner;
                            for (d, s) in ga[base..base + inner].iter_mut().zip(src) {
                                *d = s * scale;
                            }
                        }
                    }
                    acc(&mut grads, &nodes, *input, ga);
                }
                Op::SumAll(a) => {
                    let n = nodes[a.0].value.numel();
                    acc(&mut grads, &nodes, *a, vec![g[0]; n]);
                }
                Op::Concat { inputs, axis } => {
                    let (outer, total, inner) = split_axis(out_shape, *axis);
                    let mut offset = 0;
                    for &v in inputs {
                        let ext = shp(v)[*axis];
                        if nodes[v.0].requires_grad {
                            let mut gv = Vec::with_capacity(outer * ext * inner);
                            for o in 0..outer {
                                let from = (o * total + offset) * inner;
                                gv.extend_from_slice(&g[from..from + ext * inner]);
                            }
                            acc(&mut grads, &nodes, v, gv);
                        }
                        offset += ext;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let (outer, n, inner) = split_axis(shp(*input), *axis);
                    let len = out_shape[*axis];
                    let mut ga = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        ga[to..to + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    acc(&mut grads, &nodes, *input, ga);
                }
                Op::Broadcast(a) => {
                    acc(&mut grads, &nodes, *a, reduce_to(g, shp(*a), out_shape));
                }
                Op::Reshape(a) => acc(&mut grads, &nodes, *a, g.to_vec()),
            }
        }

        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    /// (analytic, numeric) at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
    pub passed: bool,
}

/// Checks `f` at `points` against the fourth-order central difference
/// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h` for every element of
/// every input. Relative error uses `max(|a|, |b|, 1e-8)` as the
/// denominator.
pub fn grad_check<F, E>(f: F, points: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    assert!(h > 0.0, "grad_check step must be positive");
    let eval = |pts: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_values: (0.0, 0.0),
        checked: 0,
        passed: true,
    };
    let mut pts = points.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("leaf gradient").data().to_vec();
        for ei in 0..pts[pi].numel() {
            let orig = pts[pi].data()[ei];
            let mut at = |offset: f64| -> Result<f64, E> {
                pts[pi].data_mut()[ei] = orig + offset;
                eval(&pts)
            };
            let (f1, fm1) = (at(h)?, at(-h)?);
            let (f2, fm2) = (at(2.0 * h)?, at(-2.0 * h)?);
            pts[pi].data_mut()[ei] = orig;
            let numeric = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
            let a = analytic[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
                report.worst_values = (a, numeric);
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
