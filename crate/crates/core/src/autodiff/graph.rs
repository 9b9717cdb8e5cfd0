//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Node order is a
//! topological order, so [`Graph::backward`] is a single reverse sweep.

use std::cell::RefCell;

use super::conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvScratch, ConvSpec};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Number of gate blocks in a ConvLSTM pre-activation tensor, ordered
/// input, forget, output, candidate.
pub const LSTM_GATES: usize = 4;

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    GateActivations(Var),
    LstmCell {
        acts: Var,
        cell: Var,
    },
    LstmHidden {
        acts: Var,
        cell: Var,
    },
    DepthToSpace {
        input: Var,
        block: usize,
    },
    StraightThrough(Var),
    ConcatBatch(Vec<Var>),
    SliceBatch {
        input: Var,
        start: usize,
    },
    Mse(Var, Var),
    Mae(Var, Var),
    Sum(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    scratch: RefCell<ConvScratch<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            scratch: RefCell::new(ConvScratch::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta.shape(), tb.shape())?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        F::tanh_slice(t.data_mut());
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        F::sigmoid_slice(t.data_mut());
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = bias.map(|b| self.value(b));
        let shape = spec.check(x.shape(), w.shape(), b.map(|b| b.shape()))?;
        let (data, _) = conv2d_forward(
            x.data(),
            x.dims4()?,
            w.data(),
            b.map(|b| b.data()),
            &spec,
            &mut self.scratch.borrow_mut(),
        )?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            rg,
        ))
    }

    /// Applies sigmoid to the input/forget/output gate blocks and tanh to the
    /// candidate block of a `[n, 4h, y, x]` pre-activation tensor.
    pub fn gate_activations(&mut self, gates: Var) -> Result<Var> {
        let t = self.value(gates);
        let [n, c4, hh, ww] = t.dims4()?;
        if c4 % LSTM_GATES != 0 {
            return Err(Error::shape(
                "gate_activations",
                format!("channel axis {c4} is not a multiple of {LSTM_GATES}"),
            ));
        }
        let block = c4 / LSTM_GATES * hh * ww;
        let mut out = t.data().to_vec();
        for img in out.chunks_mut(LSTM_GATES * block) {
            let (sig, cand) = img.split_at_mut(3 * block);
            F::sigmoid_slice(sig);
            F::tanh_slice(cand);
        }
        let t = Tensor::new(vec![n, c4, hh, ww], out)?;
        let rg = self.rg(gates);
        Ok(self.push(t, Op::GateActivations(gates), rg))
    }

    fn lstm_shapes(&self, op: &'static str, acts: Var, cell: Var) -> Result<(usize, usize)> {
        let [n, c4, hh, ww] = self.value(acts).dims4()?;
        let cs = self.value(cell).dims4()?;
        if cs != [n, c4 / LSTM_GATES, hh, ww] {
            return Err(Error::shape(
                op,
                format!(
                    "cell state {cs:?} does not match gates {:?}",
                    [n, c4, hh, ww]
                ),
            ));
        }
        Ok((n, c4 / LSTM_GATES * hh * ww))
    }

    /// `cell' = f * cell + i * g` from activated gates.
    pub fn lstm_cell(&mut self, acts: Var, cell: Var) -> Result<Var> {
        let (n, block) = self.lstm_shapes("lstm_cell", acts, cell)?;
        let a = self.value(acts).data();
        let c = self.value(cell).data();
        let mut out = Vec::with_capacity(n * block);
        for img in 0..n {
            let ga = &a[img * LSTM_GATES * block..][..LSTM_GATES * block];
            let (i, f, g) = (&ga[..block], &ga[block..2 * block], &ga[3 * block..]);
            let cp = &c[img * block..][..block];
            out.extend(
                f.iter()
                    .zip(cp)
                    .zip(i.iter().zip(g))
                    .map(|((&f, &c), (&i, &g))| f * c + i * g),
            );
        }
        let t = Tensor::new(self.value(cell).shape().to_vec(), out)?;
        let rg = self.rg(acts) || self.rg(cell);
        Ok(self.push(t, Op::LstmCell { acts, cell }, rg))
    }

    /// `hidden' = o * tanh(cell')`.
    pub fn lstm_hidden(&mut self, acts: Var, cell: Var) -> Result<Var> {
        let (_, block) = self.lstm_shapes("lstm_hidden", acts, cell)?;
        let a = self.value(acts).data();
        let mut out = self.value(cell).data().to_vec();
        F::tanh_slice(&mut out);
        for (img, h) in out.chunks_exact_mut(block).enumerate() {
            let o = &a[img * LSTM_GATES * block + 2 * block..][..block];
            h.iter_mut().zip(o).for_each(|(h, &o)| *h = *h * o);
        }
        let t = Tensor::new(self.value(cell).shape().to_vec(), out)?;
        let rg = self.rg(acts) || self.rg(cell);
        Ok(self.push(t, Op::LstmHidden { acts, cell }, rg))
    }

    /// Rearranges `[n, c*r*r, h, w]` into `[n, c, h*r, w*r]`.
    pub fn depth_to_space(&mut self, input: Var, block: usize) -> Result<Var> {
        let t = self.value(input);
        let [n, c, h, w] = t.dims4()?;
        let rr = block * block;
        if block == 0 || c % rr != 0 {
            return Err(Error::shape(
                "depth_to_space",
                format!("channel axis {c} is not divisible by block^2 = {rr}"),
            ));
        }
        let co = c / rr;
        let (ho, wo) = (h * block, w * block);
        let src = t.data();
        let mut out = vec![F::zero(); src.len()];
        for_each_d2s(n, co, h, w, block, |s, d| out[d] = src[s]);
        let t = Tensor::new(vec![n, co, ho, wo], out)?;
        let rg = self.rg(input);
        Ok(self.push(t, Op::DepthToSpace { input, block }, rg))
    }

    /// Node whose forward value is `value` but whose gradient flows to `input`
    /// unchanged.
    pub fn straight_through(&mut self, input: Var, value: Tensor<F>) -> Result<Var> {
        same_shape("straight_through", self.value(input).shape(), value.shape())?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::StraightThrough(input), rg))
    }

    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let t = Tensor::concat_batch(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::ConcatBatch(parts.to_vec()), rg))
    }

    pub fn slice_batch(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input).slice_batch(start, len)?;
        let rg = self.rg(input);
        Ok(self.push(t, Op::SliceBatch { input, start }, rg))
    }

    /// Mean squared difference, as a one-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mse", ta.shape(), tb.shape())?;
        let sum: F = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let v = sum / F::from_usize(ta.len()).unwrap();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), rg))
    }

    /// Mean absolute difference, as a one-element tensor.
    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mae", ta.shape(), tb.shape())?;
        let sum: F = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let v = sum / F::from_usize(ta.len()).unwrap();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Mae(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v: F = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(v), Op::Sum(a), rg)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must hold one value, got {:?}",
                    self.value(loss).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.iter().all(|v| v.is_finite()) {
                let (at, bad) = g.iter().enumerate().find(|(_, v)| !v.is_finite()).unwrap();
                return Err(Error::NonFinite(format!(
                    "gradient of node {idx} at flat index {at} is {bad:?}"
                )));
            }
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(ga) = self.acc(grads, *v) {
                        ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d = *d - s);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(vb) {
                        *d = *d + s * o;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(va) {
                        *d = *d + s * o;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &u)| *d = *d + u * *s);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &u), &t) in ga.iter_mut().zip(g).zip(y) {
                        *d = *d + u * (F::one() - t * t);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &u), &s) in ga.iter_mut().zip(g).zip(y) {
                        *d = *d + u * s * (F::one() - s);
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let mut dx = self.acc(grads, *input).map(std::mem::take);
                let mut dw = self.acc(grads, *weight).map(std::mem::take);
                let mut db = bias.and_then(|b| self.acc(grads, b).map(std::mem::take));
                conv2d_backward(
                    x.data(),
                    x.dims4()?,
                    w.data(),
                    spec,
                    g,
                    ConvGrads {
                        input: dx.as_deref_mut(),
                        weight: dw.as_deref_mut(),
                        bias: db.as_deref_mut(),
                    },
                    &mut self.scratch.borrow_mut(),
                )?;
                for (v, buf) in [(Some(*input), dx), (Some(*weight), dw), (*bias, db)] {
                    if let (Some(v), Some(buf)) = (v, buf) {
                        grads[v.0] = Some(buf);
                    }
                }
            }
            Op::GateActivations(a) => {
                let [_, c4, hh, ww] = node.value.dims4()?;
                let block = c4 / LSTM_GATES * hh * ww;
                if let Some(ga) = self.acc(grads, *a) {
                    let per = LSTM_GATES * block;
                    for ((d, u), s) in ga
                        .chunks_exact_mut(per)
                        .zip(g.chunks_exact(per))
                        .zip(y.chunks_exact(per))
                    {
                        let (ds, dc) = d.split_at_mut(3 * block);
                        let (us, uc) = u.split_at(3 * block);
                        let (ss, sc) = s.split_at(3 * block);
                        for ((d, &u), &s) in ds.iter_mut().zip(us).zip(ss) {
                            *d = *d + u * s * (F::one() - s);
                        }
                        for ((d, &u), &s) in dc.iter_mut().zip(uc).zip(sc) {
                            *d = *d + u * (F::one() - s * s);
                        }
                    }
                }
            }
            Op::LstmCell { acts, cell } => {
                let a = self.value(*acts).data();
                let c = self.value(*cell).data();
                let block = c.len() / self.value(*cell).shape()[0];
                let n = self.value(*cell).shape()[0];
                let per = LSTM_GATES * block;
                if let Some(ga) = self.acc(grads, *acts) {
                    for img in 0..n {
                        let dst = &mut ga[img * per..][..per];
                        let act = &a[img * per..][..per];
                        let (u, cp) = (&g[img * block..][..block], &c[img * block..][..block]);
                        let (di, rest) = dst.split_at_mut(block);
                        let (df, rest) = rest.split_at_mut(block);
                        let dg = &mut rest[block..];
                        let (ai, ag) = (&act[..block], &act[3 * block..]);
                        for k in 0..block {
                            di[k] = di[k] + u[k] * ag[k];
                            df[k] = df[k] + u[k] * cp[k];
                            dg[k] = dg[k] + u[k] * ai[k];
                        }
                    }
                }
                if let Some(gc) = self.acc(grads, *cell) {
                    for img in 0..n {
                        let f = &a[img * per + block..][..block];
                        let dst = &mut gc[img * block..][..block];
                        let u = &g[img * block..][..block];
                        for k in 0..block {
                            dst[k] = dst[k] + u[k] * f[k];
                        }
                    }
                }
            }
            Op::LstmHidden { acts, cell } => {
                let a = self.value(*acts).data();
                let c = self.value(*cell).data();
                let n = self.value(*cell).shape()[0];
                let block = c.len() / n;
                let mut tc = c.to_vec();
                F::tanh_slice(&mut tc);
                let per = LSTM_GATES * block;
                if let Some(ga) = self.acc(grads, *acts) {
                    for img in 0..n {
                        let dst = &mut ga[img * per + 2 * block..][..block];
                        let (u, t) = (&g[img * block..][..block], &tc[img * block..][..block]);
                        for k in 0..block {
                            dst[k] = dst[k] + u[k] * t[k];
                        }
                    }
                }
                if let Some(gc) = self.acc(grads, *cell) {
                    for img in 0..n {
                        let o = &a[img * per + 2 * block..][..block];
                        let dst = &mut gc[img * block..][..block];
                        let (u, t) = (&g[img * block..][..block], &tc[img * block..][..block]);
                        for k in 0..block {
                            dst[k] = dst[k] + u[k] * o[k] * (F::one() - t[k] * t[k]);
                        }
                    }
                }
            }
            Op::DepthToSpace { input, block } => {
                let [n, co, ho, wo] = node.value.dims4()?;
                if let Some(ga) = self.acc(grads, *input) {
                    for_each_d2s(n, co, ho / block, wo / block, *block, |s, d| {
                        ga[s] = ga[s] + g[d];
                    });
                }
            }
            Op::StraightThrough(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                }
            }
            Op::ConcatBatch(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.acc(grads, *p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(d, &s)| *d = *d + s);
                    }
                    offset += len;
                }
            }
            Op::SliceBatch { input, start } => {
                let per = node.value.len() / node.value.shape()[0];
                if let Some(ga) = self.acc(grads, *input) {
                    ga[start * per..start * per + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &s)| *d = *d + s);
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let k = g[0] * F::lit(2.0) / F::from_usize(va.len()).unwrap();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &x), &t) in ga.iter_mut().zip(va).zip(vb) {
                        *d = *d + k * (x - t);
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, &x), &t) in gb.iter_mut().zip(va).zip(vb) {
                        *d = *d - k * (x - t);
                    }
                }
            }
            Op::Mae(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let k = g[0] / F::from_usize(va.len()).unwrap();
                let sign = |x: F| {
                    if x > F::zero() {
                        F::one()
                    } else if x < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    }
                };
                if let Some(ga) = self.acc(grads, *a) {
                    for ((d, &x), &t) in ga.iter_mut().zip(va).zip(vb) {
                        *d = *d + k * sign(x - t);
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((d, &x), &t) in gb.iter_mut().zip(va).zip(vb) {
                        *d = *d - k * sign(x - t);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
        }
        Ok(())
    }
}

/// Calls `f(src, dst)` for every element of a depth-to-space rearrangement,
/// where `src` indexes `[n, co*r*r, h, w]` and `dst` indexes `[n, co, h*r, w*r]`.
fn for_each_d2s(
    n: usize,
    co: usize,
    h: usize,
    w: usize,
    r: usize,
    mut f: impl FnMut(usize, usize),
) {
    let (ho, wo) = (h * r, w * r);
    for img in 0..n {
        for c in 0..co {
            for dy in 0..r {
                for dx in 0..r {
                    let sc = c * r * r + dy * r + dx;
                    let sbase = (img * co * r * r + sc) * h * w;
                    let dbase = (img * co + c) * ho * wo;
                    for y in 0..h {
                        for x in 0..w {
                            f(sbase + y * w + x, dbase + (y * r + dy) * wo + x * r + dx);
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`]: gradients of leaves that require them.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient with respect to `v`, or zeros shaped like `graph.value(v)`
    /// when the loss does not depend on it.
    pub fn get(&self, graph: &Graph<F>, v: Var) -> Tensor<F> {
        let shape = graph.value(v).shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.clone()) {
            Some(data) => Tensor::new(shape, data).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn raw(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_chain() {
        // loss = sum((a * b - a) * 3)
        let mut g = Graph::new();
        let a = g.param(t(&[2], &[1.0, 2.0]));
        let b = g.param(t(&[2], &[3.0, 5.0]));
        let ab = g.mul(a, b).unwrap();
        let d = g.sub(ab, a).unwrap();
        let s = g.scale(d, 3.0);
        let loss = g.sum(s);
        assert_eq!(g.value(loss).data(), &[3.0 * (2.0 + 8.0)]);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(&g, a).data(), &[3.0 * 2.0, 3.0 * 4.0]);
        assert_eq!(grads.get(&g, b).data(), &[3.0, 6.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let mut g = Graph::new();
        let a = g.param(t(&[1], &[0.0]));
        let y = g.tanh(a);
        let l = g.sum(y);
        assert_eq!(g.value(y).data(), &[0.0]);
        assert_eq!(g.backward(l).unwrap().get(&g, a).data(), &[1.0]);
    }

    #[test]
    fn tanh_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[20.0, 0.5]));
        let y = g.tanh(a);
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-9);
        assert!(v[0] <= 1.0);
        assert!((v[1] - 0.462_117_16).abs() < 1e-8);
    }

    #[test]
    fn depth_to_space_layout() {
        let mut g = Graph::<f64>::new();
        // one image, 4 channels of 1x1 -> 1 channel 2x2
        let a = g.constant(t(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.depth_to_space(a, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let b = g.constant(t(&[1, 3, 1, 1], &[1.0, 2.0, 3.0]));
        assert!(g.depth_to_space(b, 2).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(t(&[1], &[2.0]));
        let c = g.constant(t(&[1], &[5.0]));
        let p = g.mul(a, c).unwrap();
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        assert!(grads.raw(c).is_none());
        assert_eq!(grads.get(&g, a).data(), &[5.0]);
    }

    #[test]
    fn backward_needs_scalar_loss() {
        let mut g = Graph::new();
        let a = g.param(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.param(t(&[2], &[1.0, 2.0]));
        let b = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let err = g.add(a, b).unwrap_err();
        assert!(err.to_string().contains("[2] vs [3]"), "{err}");
    }
}
