//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in construction order, which is also a
//! valid topological order. [`Graph::backward`] walks the tape once in reverse
//! and can only be called once per graph; build a fresh graph for each step.

use super::value::{axis_split, Tensor};
use crate::error::{contract_err, dim_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Relu,
    Sign,
    Abs,
    Clamp { lo: f64, hi: f64 },
    /// Multiplication by a constant.
    Scale(f64),
    /// Addition of a constant.
    Shift(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SliceRows(Var, usize),
    Reduce {
        kind: Reduction,
        input: Var,
        axis: Option<usize>,
        // flat input index of the winner for each output element (max only)
        winners: Vec<usize>,
    },
    LogSumExp {
        input: Var,
        axis: usize,
        mask: Option<Vec<bool>>,
    },
    LogSoftmax(Var, usize),
    PNorm(Var, usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-use computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`.
    ///
    /// Every node that requires a gradient has an entry, zero-filled when the
    /// root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let plan = Broadcast::plan(av.shape(), bv.shape())?;
        if op == BinaryOp::Div && bv.data().iter().any(|&d| d == 0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(plan.numel());
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
        };
        plan.for_each(|_, ia, ib| out.push(f(ad[ia], bd[ib])));
        let value = Tensor::new(plan.out_shape.clone(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let value = match op {
            UnaryOp::Neg => av.map(|x| -x),
            UnaryOp::Exp => av.map(f64::exp),
            UnaryOp::Log => {
                if let Some(bad) = av.data().iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                av.map(f64::ln)
            }
            UnaryOp::Relu => av.map(|x| if x > 0.0 { x } else { 0.0 }),
            UnaryOp::Sign => av.map(sign),
            UnaryOp::Abs => av.map(f64::abs),
            UnaryOp::Clamp { lo, hi } => {
                if !(lo <= hi) {
                    return Err(contract_err!("clamp bounds [{lo}, {hi}] are empty"));
                }
                av.map(|x| x.clamp(lo, hi))
            }
            UnaryOp::Scale(c) => av.map(|x| c * x),
            UnaryOp::Shift(c) => av.map(|x| x + c),
        };
        let rg = self.rg(a) && !matches!(op, UnaryOp::Sign);
        Ok(self.push(value, Op::Unary(op, a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a).expect("neg is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a).expect("relu is total")
    }

    pub fn sign(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sign, a).expect("sign is total")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Abs, a).expect("abs is total")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryOp::Clamp { lo, hi }, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryOp::Scale(c), a).expect("scale is total")
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryOp::Shift(c), a).expect("shift is total")
    }

    /// Matrix product of `m x k` and `k x n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = matrix_dims(av)?;
        let (k2, n) = matrix_dims(bv)?;
        if k != k2 {
            return Err(dim_err!(
                "matmul inner dimensions differ: {:?} x {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let (r, c) = matrix_dims(av)?;
        let value = Tensor::new(vec![c, r], transpose_raw(av.data(), r, c))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.rank() == 0 || start > end || end > av.shape()[0] {
            return Err(dim_err!(
                "row slice {start}..{end} invalid for shape {:?}",
                av.shape()
            ));
        }
        let c = av.cols();
        let mut shape = av.shape().to_vec();
        shape[0] = end - start;
        let value = Tensor::new(shape, av.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    /// Sum, mean or max over `axis` (kept with extent 1) or over everything
    /// (rank-0 result) when `axis` is `None`.
    pub fn reduce(&mut self, kind: Reduction, a: Var, axis: Option<usize>) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let (outer, len, inner, out_shape) = match axis {
            None => (1, av.numel(), 1, Vec::new()),
            Some(ax) => {
                let (o, l, i) = axis_split(av.shape(), ax)?;
                let mut s = av.shape().to_vec();
                s[ax] = 1;
                (o, l, i, s)
            }
        };
        if len == 0 {
            return Err(contract_err!("reduction over an empty axis"));
        }
        let d = av.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut winners = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                match kind {
                    Reduction::Sum | Reduction::Mean => {
                        let s: f64 = (0..len).map(|l| d[at(l)]).sum();
                        out.push(if kind == Reduction::Mean { s / len as f64 } else { s });
                    }
                    Reduction::Max => {
                        let mut best = at(0);
                        for l in 1..len {
                            if d[at(l)] > d[best] {
                                best = at(l);
                            }
                        }
                        winners.push(best);
                        out.push(d[best]);
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(
            value,
            Op::Reduce {
                kind,
                input: a,
                axis,
                winners,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Sum, a, None).expect("sum over all elements")
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduction::Sum, a, Some(axis))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Mean, a, None)
    }

    /// `log(sum(exp(a)))` along `axis`, evaluated with a max shift.
    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.lse_impl(a, axis, None)
    }

    /// Like [`Graph::log_sum_exp`] but only over entries where `mask` is set.
    ///
    /// `mask` has the shape of `a`; every reduced slice must keep at least one entry.
    pub fn log_sum_exp_masked(&mut self, a: Var, axis: usize, mask: &Tensor) -> Result<Var> {
        if mask.shape() != self.shape(a) {
            return Err(dim_err!(
                "mask shape {:?} differs from input {:?}",
                mask.shape(),
                self.shape(a)
            ));
        }
        let m = mask.data().iter().map(|&v| v != 0.0).collect();
        self.lse_impl(a, axis, Some(m))
    }

    fn lse_impl(&mut self, a: Var, axis: usize, mask: Option<Vec<bool>>) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let (outer, len, inner) = axis_split(av.shape(), axis)?;
        let d = av.data();
        let keep = |idx: usize| mask.as_ref().is_none_or(|m| m[idx]);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                if !(0..len).any(|l| keep(at(l))) {
                    return Err(contract_err!("log_sum_exp over an empty selection"));
                }
                let mx = (0..len)
                    .filter(|&l| keep(at(l)))
                    .map(|l| d[at(l)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let has_nan = (0..len).any(|l| keep(at(l)) && d[at(l)].is_nan());
                if has_nan || mx.is_infinite() {
                    out.push(if has_nan { f64::NAN } else { mx });
                    continue;
                }
                let s: f64 = (0..len)
                    .filter(|&l| keep(at(l)))
                    .map(|l| (d[at(l)] - mx).exp())
                    .sum();
                out.push(mx + s.ln());
            }
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSumExp { input: a, axis, mask }, rg))
    }

    /// `a - log_sum_exp(a)` along `axis`.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let (outer, len, inner) = axis_split(av.shape(), axis)?;
        let d = av.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mx = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + (0..len).map(|l| (d[at(l)] - mx).exp()).sum::<f64>().ln();
                for l in 0..len {
                    out[at(l)] = d[at(l)] - lse;
                }
            }
        }
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmax(a, axis), rg))
    }

    /// `(sum |a|^p)^(1/p)` along `axis`, `p >= 1`. The gradient at a zero
    /// slice is taken to be zero.
    pub fn pnorm(&mut self, a: Var, axis: usize, p: f64) -> Result<Var> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Domain(format!("p-norm needs finite p >= 1, got {p}")));
        }
        let av = &self.nodes[a.0].value;
        let (outer, len, inner) = axis_split(av.shape(), axis)?;
        let d = av.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let n = if p == 2.0 {
                    (0..len).map(|l| d[at(l)] * d[at(l)]).sum::<f64>().sqrt()
                } else if p == 1.0 {
                    (0..len).map(|l| d[at(l)].abs()).sum::<f64>()
                } else {
                    (0..len).map(|l| d[at(l)].abs().powf(p)).sum::<f64>().powf(1.0 / p)
                };
                out.push(n);
            }
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::PNorm(a, axis, p), rg))
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// The graph is consumed by the call; a second call fails with a state error.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if root.0 >= self.nodes.len() {
            return Err(contract_err!("root {:?} is not a node of this graph", root));
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(contract_err!(
                "backward root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            ));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.requires_grad {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::new(shape, data).expect("gradient matches node shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let plan = Broadcast::plan(av.shape(), bv.shape()).expect("checked in forward");
                let (ad, bd) = (av.data(), bv.data());
                acc(*a, &mut |ga| {
                    plan.for_each(|o, ia, ib| {
                        ga[ia] += match op {
                            BinaryOp::Add | BinaryOp::Sub => g[o],
                            BinaryOp::Mul => g[o] * bd[ib],
                            BinaryOp::Div => g[o] / bd[ib],
                        }
                    })
                });
                acc(*b, &mut |gb| {
                    plan.for_each(|o, ia, ib| {
                        gb[ib] += match op {
                            BinaryOp::Add => g[o],
                            BinaryOp::Sub => -g[o],
                            BinaryOp::Mul => g[o] * ad[ia],
                            BinaryOp::Div => -g[o] * ad[ia] / (bd[ib] * bd[ib]),
                        }
                    })
                });
            }
            Op::Unary(op, a) => {
                let x = val(*a).data();
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += match *op {
                            UnaryOp::Neg => -g[k],
                            UnaryOp::Exp => g[k] * y[k],
                            UnaryOp::Log => g[k] / x[k],
                            UnaryOp::Relu => {
                                if x[k] > 0.0 {
                                    g[k]
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Sign => 0.0,
                            UnaryOp::Abs => g[k] * sign(x[k]),
                            UnaryOp::Clamp { lo, hi } => {
                                if x[k] >= lo && x[k] <= hi {
                                    g[k]
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Scale(c) => c * g[k],
                            UnaryOp::Shift(_) => g[k],
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                acc(*a, &mut |ga| {
                    // grad_a = g · bᵀ
                    let bt = transpose_raw(bv.data(), k, n);
                    let prod = matmul_raw(g, &bt, m, n, k);
                    ga.iter_mut().zip(prod).for_each(|(x, p)| *x += p);
                });
                acc(*b, &mut |gb| {
                    // grad_b = aᵀ · g
                    let at = transpose_raw(av.data(), m, k);
                    let prod = matmul_raw(&at, g, k, m, n);
                    gb.iter_mut().zip(prod).for_each(|(x, p)| *x += p);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                acc(*a, &mut |ga| {
                    let t = transpose_raw(g, c, r);
                    ga.iter_mut().zip(t).for_each(|(x, p)| *x += p);
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(x, p)| *x += p);
            }),
            Op::SliceRows(a, start) => {
                let c = val(*a).cols();
                acc(*a, &mut |ga| {
                    let off = start * c;
                    ga[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, p)| *x += p);
                });
            }
            Op::Reduce {
                kind,
                input,
                axis,
                winners,
            } => {
                let shape = val(*input).shape();
                let (outer, len, inner) = match axis {
                    None => (1, val(*input).numel(), 1),
                    Some(ax) => axis_split(shape, *ax).expect("checked in forward"),
                };
                acc(*input, &mut |ga| match kind {
                    Reduction::Max => {
                        for (gi, &w) in g.iter().zip(winners) {
                            ga[w] += gi;
                        }
                    }
                    Reduction::Sum | Reduction::Mean => {
                        let f = if *kind == Reduction::Mean { 1.0 / len as f64 } else { 1.0 };
                        for o in 0..outer {
                            for i in 0..inner {
                                let go = g[o * inner + i] * f;
                                for l in 0..len {
                                    ga[(o * len + l) * inner + i] += go;
                                }
                            }
                        }
                    }
                });
            }
            Op::LogSumExp { input, axis, mask } => {
                let x = val(*input);
                let (outer, len, inner) = axis_split(x.shape(), *axis).expect("checked");
                let xd = x.data();
                let y = node.value.data();
                acc(*input, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let r = o * inner + i;
                            for l in 0..len {
                                let at = (o * len + l) * inner + i;
                                if mask.as_ref().is_none_or(|m| m[at]) {
                                    ga[at] += g[r] * (xd[at] - y[r]).exp();
                                }
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(a, axis) => {
                let (outer, len, inner) = axis_split(val(*a).shape(), *axis).expect("checked");
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let gs: f64 = (0..len).map(|l| g[at(l)]).sum();
                            for l in 0..len {
                                ga[at(l)] += g[at(l)] - y[at(l)].exp() * gs;
                            }
                        }
                    }
                });
            }
            Op::PNorm(a, axis, p) => {
                let x = val(*a);
                let (outer, len, inner) = axis_split(x.shape(), *axis).expect("checked");
                let xd = x.data();
                let nrm = node.value.data();
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let r = o * inner + i;
                            if nrm[r] == 0.0 {
                                continue;
                            }
                            for l in 0..len {
                                let at = (o * len + l) * inner + i;
                                let v = xd[at];
                                let d = if *p == 2.0 {
                                    v / nrm[r]
                                } else if *p == 1.0 {
                                    sign(v)
                                } else {
                                    sign(v) * (v.abs() / nrm[r]).powf(p - 1.0)
                                };
                                ga[at] += g[r] * d;
                            }
                        }
                    }
                });
            }
        }
    }
}

/// `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn matrix_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(dim_err!("expected a matrix, got shape {s:?}")),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Index mapping for rank-agreeing broadcasting.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

impl Broadcast {
    fn plan(a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Self {
                out_shape: a.to_vec(),
                a_strides: Vec::new(),
                b_strides: Vec::new(),
                same: true,
            });
        }
        if a.len() != b.len() {
            return Err(dim_err!("cannot broadcast {a:?} with {b:?}: ranks differ"));
        }
        let mut out_shape = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            out_shape.push(match (x, y) {
                _ if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(dim_err!("cannot broadcast {a:?} with {b:?}")),
            });
        }
        Ok(Self {
            a_strides: broadcast_strides(a),
            b_strides: broadcast_strides(b),
            out_shape,
            same: false,
        })
    }

    fn numel(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element in order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let total = self.numel();
        if self.same {
            for k in 0..total {
                f(k, k, k);
            }
            return;
        }
        let rank = self.out_shape.len();
        let mut counter = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..total {
            f(o, ia, ib);
            for d in (0..rank).rev() {
                counter[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if counter[d] < self.out_shape[d] {
                    break;
                }
                ia -= self.a_strides[d] * counter[d];
                ib -= self.b_strides[d] * counter[d];
                counter[d] = 0;
            }
        }
    }
}

/// Row-major strides with zero stride on broadcast (extent-1) axes.
fn broadcast_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}
