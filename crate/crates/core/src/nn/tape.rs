//! Reverse-mode automatic differentiation over dense `f64` vectors.
//!
//! A [`Tape`] records every operation of one forward pass in creation order.
//! Values live in a single arena; [`Tape::backward`] walks the nodes in
//! reverse and accumulates parameter gradients into a [`Grads`] buffer.

use super::params::{Grads, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param(ParamId),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat {
        first: u32,
        count: u32,
    },
    Slice {
        x: Var,
        start: u32,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Dot(Var, Var),
    Sum(Var),
    SqNorm(Var),
    MaxPool {
        first: u32,
        count: u32,
    },
    Min {
        first: u32,
        count: u32,
    },
    WeightedSum {
        weights: Var,
        first: u32,
        count: u32,
    },
    Element(Var, u32),
    StraightThrough(Var),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    off: u32,
    len: u32,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    vals: Vec<f64>,
    nodes: Vec<Node>,
    links: Vec<Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            vals: Vec::with_capacity(1 << 16),
            nodes: Vec::with_capacity(1 << 12),
            links: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: impl IntoIterator<Item = f64>, op: Op) -> Var {
        let off = self.vals.len();
        self.vals.extend(value);
        let len = self.vals.len() - off;
        self.nodes.push(Node {
            off: off as u32,
            len: len as u32,
            op,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    fn push_links(&mut self, vars: &[Var]) -> (u32, u32) {
        let first = self.links.len() as u32;
        self.links.extend_from_slice(vars);
        (first, vars.len() as u32)
    }

    fn range(&self, v: Var) -> std::ops::Range<usize> {
        let n = self.nodes[v.0 as usize];
        n.off as usize..(n.off + n.len) as usize
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.vals[self.range(v)]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].len as usize
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: &[f64]) -> Var {
        self.push(value.iter().copied(), Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.push(std::iter::repeat_n(0.0, n), Op::Leaf)
    }

    /// A whole parameter tensor, flattened row-major.
    pub fn param(&mut self, id: ParamId) -> Var {
        let data = &self.params.tensor(id).data;
        let off = self.vals.len();
        self.vals.extend_from_slice(data);
        self.nodes.push(Node {
            off: off as u32,
            len: data.len() as u32,
            op: Op::Param(id),
        });
        Var(self.nodes.len() as u32 - 1)
    }

    /// `W x + b` with `W` of shape (out, in).
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wt = self.params.tensor(w);
        let (rows, cols) = (wt.rows, wt.cols);
        assert_eq!(cols, self.dim(x), "affine input size");
        let off = self.vals.len();
        self.vals.resize(off + rows, 0.0);
        let xr = self.range(x);
        let (head, out) = self.vals.split_at_mut(off);
        let xv = &head[xr];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wt.data[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (a, c) in row.iter().zip(xv) {
                acc += a * c;
            }
            *o = acc;
        }
        if let Some(b) = b {
            for (o, bv) in out.iter_mut().zip(&self.params.tensor(b).data) {
                *o += bv;
            }
        }
        self.nodes.push(Node {
            off: off as u32,
            len: rows as u32,
            op: Op::Affine { w, b, x },
        });
        Var(self.nodes.len() as u32 - 1)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.dim(a), self.dim(b), "elementwise operand sizes");
        let (ra, rb) = (self.range(a), self.range(b));
        let off = self.vals.len();
        for i in 0..ra.len() {
            let v = f(self.vals[ra.start + i], self.vals[rb.start + i]);
            self.vals.push(v);
        }
        self.nodes.push(Node {
            off: off as u32,
            len: ra.len() as u32,
            op,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let r = self.range(x);
        let off = self.vals.len();
        for i in r.clone() {
            let v = f(self.vals[i]);
            self.vals.push(v);
        }
        self.nodes.push(Node {
            off: off as u32,
            len: r.len() as u32,
            op,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.map(x, |v| v * k, Op::Scale(x, k))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::Offset(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let off = self.vals.len();
        for &p in parts {
            let r = self.range(p);
            self.vals.extend_from_within(r);
        }
        let len = self.vals.len() - off;
        let (first, count) = self.push_links(parts);
        self.nodes.push(Node {
            off: off as u32,
            len: len as u32,
            op: Op::Concat { first, count },
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let r = self.range(x);
        assert!(start + len <= r.len(), "slice out of range");
        let off = self.vals.len();
        self.vals
            .extend_from_within(r.start + start..r.start + start + len);
        self.nodes.push(Node {
            off: off as u32,
            len: len as u32,
            op: Op::Slice {
                x,
                start: start as u32,
            },
        });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax(self.value(x));
        self.push(out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = log_softmax(self.value(x));
        self.push(out, Op::LogSoftmax(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dim(a), self.dim(b), "dot operand sizes");
        let v: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .sum();
        self.push([v], Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v: f64 = self.value(x).iter().sum();
        self.push([v], Op::Sum(x))
    }

    pub fn sq_norm(&mut self, x: Var) -> Var {
        let v: f64 = self.value(x).iter().map(|a| a * a).sum();
        self.push([v], Op::SqNorm(x))
    }

    /// Sum of a list of scalars.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Var {
        let c = self.concat(xs);
        self.sum(c)
    }

    /// Element-wise maximum over equally sized vectors.
    pub fn max_pool(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "max_pool of nothing");
        let n = self.dim(xs[0]);
        let mut out = self.value(xs[0]).to_vec();
        for &x in &xs[1..] {
            assert_eq!(self.dim(x), n, "max_pool operand sizes");
            for (o, v) in out.iter_mut().zip(self.value(x)) {
                if *v > *o {
                    *o = *v;
                }
            }
        }
        let (first, count) = self.push_links(xs);
        self.push(out, Op::MaxPool { first, count })
    }

    /// Minimum over scalars; the gradient goes to the first minimizer.
    pub fn min(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "min of nothing");
        let v = xs
            .iter()
            .map(|&x| self.scalar(x))
            .fold(f64::INFINITY, f64::min);
        let (first, count) = self.push_links(xs);
        self.push([v], Op::Min { first, count })
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        assert_eq!(self.dim(weights), items.len(), "one weight per item");
        let n = self.dim(items[0]);
        let mut out = vec![0.0; n];
        for (i, &it) in items.iter().enumerate() {
            let w = self.value(weights)[i];
            for (o, v) in out.iter_mut().zip(self.value(it)) {
                *o += w * v;
            }
        }
        let (first, count) = self.push_links(items);
        self.push(
            out,
            Op::WeightedSum {
                weights,
                first,
                count,
            },
        )
    }

    pub fn element(&mut self, x: Var, i: usize) -> Var {
        let v = self.value(x)[i];
        self.push([v], Op::Element(x, i as u32))
    }

    /// Takes the value `hard` in the forward pass and passes its gradient
    /// straight to `soft` in the backward pass.
    pub fn straight_through(&mut self, soft: Var, hard: &[f64]) -> Var {
        assert_eq!(self.dim(soft), hard.len(), "straight-through sizes");
        self.push(hard.iter().copied(), Op::StraightThrough(soft))
    }

    /// Accumulates d`loss`/d(param) into `grads`. `loss` must be a scalar.
    pub fn backward(&self, loss: Var, grads: &mut Grads) {
        assert_eq!(self.dim(loss), 1, "backward needs a scalar loss");
        let mut g = vec![0.0; self.vals.len()];
        g[self.range(loss).start] = 1.0;

        for idx in (0..=loss.0 as usize).rev() {
            let node = self.nodes[idx];
            let (off, len) = (node.off as usize, node.len as usize);
            let (lower, upper) = g.split_at_mut(off);
            let go = &upper[..len];
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            let out = &self.vals[off..off + len];
            // Operands were created before this node, so their gradients
            // live in `lower`.
            macro_rules! at {
                ($v:expr) => {
                    slot(&self.nodes, lower, $v)
                };
            }
            match node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (acc, v) in grads.get_mut(id).iter_mut().zip(go) {
                        *acc += v;
                    }
                }
                Op::Affine { w, b, x } => {
                    let wt = self.params.tensor(w);
                    let cols = wt.cols;
                    let xv = self.value(x);
                    let gw = grads.get_mut(w);
                    for (r, &gr) in go.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        for (acc, xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *acc += gr * xc;
                        }
                    }
                    if let Some(b) = b {
                        for (acc, v) in grads.get_mut(b).iter_mut().zip(go) {
                            *acc += v;
                        }
                    }
                    if !self.is_constant(x) {
                        let gx = at!(x);
                        for (r, &gr) in go.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for (acc, wv) in gx.iter_mut().zip(&wt.data[r * cols..(r + 1) * cols]) {
                                *acc += gr * wv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(at!(a), go);
                    add_into(at!(b), go);
                }
                Op::Sub(a, b) => {
                    add_into(at!(a), go);
                    for (acc, v) in at!(b).iter_mut().zip(go) {
                        *acc -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    for ((acc, v), y) in at!(a).iter_mut().zip(go).zip(vb) {
                        *acc += v * y;
                    }
                    for ((acc, v), y) in at!(b).iter_mut().zip(go).zip(va) {
                        *acc += v * y;
                    }
                }
                Op::Scale(x, k) => {
                    for (acc, v) in at!(x).iter_mut().zip(go) {
                        *acc += k * v;
                    }
                }
                Op::Offset(x) => add_into(at!(x), go),
                Op::Sigmoid(x) => {
                    for ((acc, v), s) in at!(x).iter_mut().zip(go).zip(out) {
                        *acc += v * s * (1.0 - s);
                    }
                }
                Op::Tanh(x) => {
                    for ((acc, v), t) in at!(x).iter_mut().zip(go).zip(out) {
                        *acc += v * (1.0 - t * t);
                    }
                }
                Op::Relu(x) => {
                    for ((acc, v), o) in at!(x).iter_mut().zip(go).zip(out) {
                        if *o > 0.0 {
                            *acc += v;
                        }
                    }
                }
                Op::Concat { first, count } => {
                    let mut pos = 0;
                    for &p in &self.links[first as usize..(first + count) as usize] {
                        let n = self.dim(p);
                        add_into(at!(p), &go[pos..pos + n]);
                        pos += n;
                    }
                }
                Op::Slice { x, start } => {
                    let s = start as usize;
                    add_into(&mut at!(x)[s..s + len], go);
                }
                Op::Softmax(x) => {
                    let inner: f64 = go.iter().zip(out).map(|(a, b)| a * b).sum();
                    for ((acc, v), s) in at!(x).iter_mut().zip(go).zip(out) {
                        *acc += s * (v - inner);
                    }
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = go.iter().sum();
                    for ((acc, v), l) in at!(x).iter_mut().zip(go).zip(out) {
                        *acc += v - l.exp() * total;
                    }
                }
                Op::Dot(a, b) => {
                    let gv = go[0];
                    let (va, vb) = (self.value(a), self.value(b));
                    for (acc, y) in at!(a).iter_mut().zip(vb) {
                        *acc += gv * y;
                    }
                    for (acc, y) in at!(b).iter_mut().zip(va) {
                        *acc += gv * y;
                    }
                }
                Op::Sum(x) => {
                    let gv = go[0];
                    for acc in at!(x).iter_mut() {
                        *acc += gv;
                    }
                }
                Op::SqNorm(x) => {
                    let gv = go[0];
                    let xv = self.value(x);
                    for (acc, y) in at!(x).iter_mut().zip(xv) {
                        *acc += 2.0 * gv * y;
                    }
                }
                Op::MaxPool { first, count } => {
                    let items = &self.links[first as usize..(first + count) as usize];
                    for (j, &gj) in go.iter().enumerate() {
                        // First item attaining the max receives the gradient.
                        if let Some(&winner) = items.iter().find(|&&it| self.value(it)[j] == out[j])
                        {
                            at!(winner)[j] += gj;
                        }
                    }
                }
                Op::Min { first, count } => {
                    let items = &self.links[first as usize..(first + count) as usize];
                    if let Some(&winner) = items.iter().find(|&&it| self.scalar(it) == out[0]) {
                        at!(winner)[0] += go[0];
                    }
                }
                Op::WeightedSum {
                    weights,
                    first,
                    count,
                } => {
                    let items = &self.links[first as usize..(first + count) as usize];
                    let wv = self.value(weights).to_vec();
                    for (i, &it) in items.iter().enumerate() {
                        let dot: f64 = self.value(it).iter().zip(go).map(|(a, b)| a * b).sum();
                        at!(weights)[i] += dot;
                        for (acc, v) in at!(it).iter_mut().zip(go) {
                            *acc += wv[i] * v;
                        }
                    }
                }
                Op::Element(x, i) => at!(x)[i as usize] += go[0],
                Op::StraightThrough(soft) => add_into(at!(soft), go),
            }
        }
    }

    fn is_constant(&self, v: Var) -> bool {
        matches!(self.nodes[v.0 as usize].op, Op::Leaf)
    }
}

fn slot<'a>(nodes: &[Node], lower: &'a mut [f64], v: Var) -> &'a mut [f64] {
    let n = nodes[v.0 as usize];
    &mut lower[n.off as usize..(n.off + n.len) as usize]
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| v - lse).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
