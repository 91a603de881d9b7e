//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records one forward pass. Every op appends a node holding its
//! value; `backward` walks the tape once in reverse, accumulating gradients
//! additively where a value fans out to several consumers. Second-order
//! quantities are obtained from gradient differences ([`hvp`]).

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::params::ParamVector;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool1d(Var),
    Concat(Vec<Var>),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Variables bound to the slots of a [`ParamVector`], in slot order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Invalid(format!("no parameter slot named `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Recorded operations of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Invalid(format!("variable {} is not part of this graph", v.0)))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers every slot of `params` as a differentiable leaf.
    pub fn bind(&mut self, params: &ParamVector) -> ParamVars {
        let mut names = Vec::with_capacity(params.num_slots());
        let mut vars = Vec::with_capacity(params.num_slots());
        for (name, t) in params.slots() {
            names.push(name.clone());
            vars.push(self.leaf(t.clone()));
        }
        ParamVars { names, vars }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = self.node(a)?.value.map(|x| k * x);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Scale(a, k), rg))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.node(a)?.value.map(|x| x * x);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Square(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.node(a)?.value.data().iter().sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.node(a)?.value;
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.node(a)?.value.map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Relu(a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.node(a)?.value.map(sigmoid);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Sigmoid(a), rg))
    }

    /// `x [B,I] · w [I,O] + b [O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (&self.node(x)?.value, &self.node(w)?.value, &self.node(b)?.value);
        if tx.rank() != 2 || tw.rank() != 2 || tb.rank() != 1 {
            return Err(Error::shape(
                "dense",
                format!("x {:?}, w {:?}, b {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let (bsz, i, o) = (tx.dim(0), tx.dim(1), tw.dim(1));
        if tw.dim(0) != i || tb.dim(0) != o {
            return Err(Error::shape(
                "dense",
                format!("x {:?}, w {:?}, b {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let out = dense_forward(tx.data(), tw.data(), tb.data(), bsz, i, o);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(vec![bsz, o], out)?, Op::Dense { x, w, b }, rg))
    }

    /// Valid (unpadded, stride 1) convolution: `x [B,C,L]`, `w [O,C,K]`, `b [O]`
    /// to `[B,O,L-K+1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (&self.node(x)?.value, &self.node(w)?.value, &self.node(b)?.value);
        let bad = || {
            Error::shape(
                "conv1d",
                format!("x {:?}, w {:?}, b {:?}", tx.shape(), tw.shape(), tb.shape()),
            )
        };
        if tx.rank() != 3 || tw.rank() != 3 || tb.rank() != 1 {
            return Err(bad());
        }
        let (bsz, c, l) = (tx.dim(0), tx.dim(1), tx.dim(2));
        let (o, k) = (tw.dim(0), tw.dim(2));
        if tw.dim(1) != c || tb.dim(0) != o || k == 0 || k > l {
            return Err(bad());
        }
        let lo = l - k + 1;
        let mut out = vec![0.0; bsz * o * lo];
        for s in 0..bsz {
            conv1d_single(
                &tx.data()[s * c * l..(s + 1) * c * l],
                tw.data(),
                tb.data(),
                c,
                l,
                o,
                k,
                &mut out[s * o * lo..(s + 1) * o * lo],
            );
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(vec![bsz, o, lo], out)?, Op::Conv1d { x, w, b }, rg))
    }

    /// Non-overlapping max pooling over the last axis of `[B,C,L]`; a trailing
    /// partial window is dropped. Ties resolve to the earliest position.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let tx = &self.node(x)?.value;
        if tx.rank() != 3 || size == 0 {
            return Err(Error::shape("max_pool1d", format!("x {:?}, size {size}", tx.shape())));
        }
        let (bsz, c, l) = (tx.dim(0), tx.dim(1), tx.dim(2));
        let lo = l / size;
        let mut out = Vec::with_capacity(bsz * c * lo);
        let mut argmax = Vec::with_capacity(bsz * c * lo);
        let data = tx.data();
        for row in 0..bsz * c {
            let base = row * l;
            for p in 0..lo {
                let start = base + p * size;
                let mut best = start;
                for q in start + 1..start + size {
                    if data[q] > data[best] {
                        best = q;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![bsz, c, lo], out)?, Op::MaxPool1d { x, argmax }, rg))
    }

    /// Mean over the last axis: `[B,C,L]` to `[B,C]`.
    pub fn global_avg_pool1d(&mut self, x: Var) -> Result<Var> {
        let tx = &self.node(x)?.value;
        if tx.rank() != 3 || tx.dim(2) == 0 {
            return Err(Error::shape("global_avg_pool1d", format!("x {:?}", tx.shape())));
        }
        let (bsz, c, l) = (tx.dim(0), tx.dim(1), tx.dim(2));
        let out = tx
            .data()
            .chunks_exact(l)
            .map(|r| r.iter().sum::<f64>() / l as f64)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![bsz, c], out)?, Op::GlobalAvgPool1d(x), rg))
    }

    /// Concatenates rank-2 tensors along their second axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let rows = self.node(parts[0])?.value.shape().first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = &self.node(p)?.value;
            if t.rank() != 2 || t.dim(0) != rows {
                return Err(Error::shape(
                    "concat",
                    format!("part {:?} incompatible with {rows} rows", t.shape()),
                ));
            }
            widths.push(t.dim(1));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, total], out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = &self.node(x)?.value;
        if tx.rank() != 2 {
            return Err(Error::shape("softmax", format!("x {:?}", tx.shape())));
        }
        let cols = tx.dim(1);
        let mut out = tx.data().to_vec();
        if cols > 0 {
            for row in out.chunks_exact_mut(cols) {
                softmax_in_place(row);
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = &self.node(logits)?.value;
        if t.rank() != 2 || t.dim(0) != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} with {} labels", t.shape(), labels.len()),
            ));
        }
        let (bsz, classes) = (t.dim(0), t.dim(1));
        if bsz == 0 {
            return Err(Error::Invalid("cross_entropy over an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (row, (&y, p)) in labels.iter().zip(probs.chunks_exact_mut(classes)).enumerate() {
            let logits_row = t.row(row);
            let m = logits_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits_row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - logits_row[y];
            softmax_in_place(p);
        }
        loss /= bsz as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lnode = self.node(loss)?;
        if !lnode.value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape is {:?}", lnode.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if wants(v) {
                        accumulate(grads, v, val(v).len(), |g| {
                            g.iter_mut().zip(gout).for_each(|(x, y)| *x += sign * y)
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if wants(v) {
                        accumulate(grads, v, val(v).len(), |g| {
                            g.iter_mut().zip(gout).for_each(|(x, y)| *x += sign * y)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    accumulate(grads, *a, ta.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += gout[i] * tb[i];
                        }
                    });
                }
                if wants(*b) {
                    accumulate(grads, *b, tb.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += gout[i] * ta[i];
                        }
                    });
                }
            }
            Op::Scale(a, k) => {
                accumulate(grads, *a, val(*a).len(), |g| {
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x += k * y)
                });
            }
            Op::Square(a) => {
                let ta = val(*a).data();
                accumulate(grads, *a, ta.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += 2.0 * ta[i] * gout[i];
                    }
                });
            }
            Op::Sum(a) => {
                accumulate(grads, *a, val(*a).len(), |g| g.iter_mut().for_each(|x| *x += gout[0]));
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let d = gout[0] / n as f64;
                accumulate(grads, *a, n, |g| g.iter_mut().for_each(|x| *x += d));
            }
            Op::Relu(a) => {
                let ta = val(*a).data();
                accumulate(grads, *a, ta.len(), |g| {
                    for i in 0..g.len() {
                        if ta[i] > 0.0 {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                accumulate(grads, *a, out.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Dense { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (bsz, i, o) = (tx.dim(0), tx.dim(1), tw.dim(1));
                let gy = MatRef::new(gout, bsz, o);
                if wants(*x) {
                    accumulate(grads, *x, bsz * i, |g| {
                        gemm(gy, MatRef::new(tw.data(), i, o).t(), 1.0, g)
                    });
                }
                if wants(*w) {
                    accumulate(grads, *w, i * o, |g| {
                        gemm(MatRef::new(tx.data(), bsz, i).t(), gy, 1.0, g)
                    });
                }
                if wants(*b) {
                    accumulate(grads, *b, o, |g| {
                        for r in 0..bsz {
                            for (gj, y) in g.iter_mut().zip(&gout[r * o..(r + 1) * o]) {
                                *gj += y;
                            }
                        }
                    });
                }
            }
            Op::Conv1d { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (bsz, c, l) = (tx.dim(0), tx.dim(1), tx.dim(2));
                let (o, k) = (tw.dim(0), tw.dim(2));
                let lo = l - k + 1;
                let ck = c * k;
                let (want_x, want_w, want_b) = (wants(*x), wants(*w), wants(*b));
                let mut gw = want_w.then(|| vec![0.0; o * ck]);
                let mut gx = want_x.then(|| vec![0.0; bsz * c * l]);
                let mut gwc = vec![0.0; o * k];
                let mut dcols = Vec::new();
                for s in 0..bsz {
                    let gy = &gout[s * o * lo..(s + 1) * o * lo];
                    let xs = &tx.data()[s * c * l..(s + 1) * c * l];
                    if let Some(gw) = gw.as_mut() {
                        for ci in 0..c {
                            gemm(
                                MatRef::new(gy, o, lo),
                                hankel(&xs[ci * l..(ci + 1) * l], k, lo).t(),
                                0.0,
                                &mut gwc,
                            );
                            for (oi, src) in gwc.chunks_exact(k).enumerate() {
                                let dst = &mut gw[oi * ck + ci * k..oi * ck + (ci + 1) * k];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        dcols.resize(ck * lo, 0.0);
                        gemm(
                            MatRef::new(tw.data(), o, ck).t(),
                            MatRef::new(gy, o, lo),
                            0.0,
                            &mut dcols,
                        );
                        let gxs = &mut gx[s * c * l..(s + 1) * c * l];
                        for ci in 0..c {
                            for j in 0..k {
                                let src = &dcols[(ci * k + j) * lo..(ci * k + j + 1) * lo];
                                let dst = &mut gxs[ci * l + j..ci * l + j + lo];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                    }
                }
                if let Some(gw) = gw {
                    accumulate(grads, *w, o * ck, |g| g.iter_mut().zip(&gw).for_each(|(a, b)| *a += b));
                }
                if let Some(gx) = gx {
                    accumulate(grads, *x, bsz * c * l, |g| {
                        g.iter_mut().zip(&gx).for_each(|(a, b)| *a += b)
                    });
                }
                if want_b {
                    accumulate(grads, *b, o, |g| {
                        for s in 0..bsz {
                            for (oi, gb) in g.iter_mut().enumerate() {
                                let base = (s * o + oi) * lo;
                                *gb += gout[base..base + lo].iter().sum::<f64>();
                            }
                        }
                    });
                }
            }
            Op::MaxPool1d { x, argmax } => {
                accumulate(grads, *x, val(*x).len(), |g| {
                    for (&src, &d) in argmax.iter().zip(gout) {
                        g[src] += d;
                    }
                });
            }
            Op::GlobalAvgPool1d(x) => {
                let l = val(*x).dim(2);
                let inv = 1.0 / l as f64;
                accumulate(grads, *x, val(*x).len(), |g| {
                    for (chunk, &d) in g.chunks_exact_mut(l).zip(gout) {
                        chunk.iter_mut().for_each(|v| *v += d * inv);
                    }
                });
            }
            Op::Concat(parts) => {
                let rows = node.value.dim(0);
                let total = node.value.dim(1);
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).dim(1);
                    if wants(p) {
                        accumulate(grads, p, rows * width, |g| {
                            for r in 0..rows {
                                let src = &gout[r * total + offset..r * total + offset + width];
                                g[r * width..(r + 1) * width]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(a, b)| *a += b);
                            }
                        });
                    }
                    offset += width;
                }
            }
            Op::Softmax(x) => {
                let s = node.value.data();
                let cols = node.value.dim(1);
                accumulate(grads, *x, s.len(), |g| {
                    if cols == 0 {
                        return;
                    }
                    for ((gr, sr), dr) in g
                        .chunks_exact_mut(cols)
                        .zip(s.chunks_exact(cols))
                        .zip(gout.chunks_exact(cols))
                    {
                        let inner: f64 = sr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gr[j] += sr[j] * (dr[j] - inner);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = val(*logits).dim(1);
                let scale = gout[0] / labels.len() as f64;
                accumulate(grads, *logits, probs.len(), |g| {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let target = if j == y { 1.0 } else { 0.0 };
                            g[r * classes + j] += scale * (probs[r * classes + j] - target);
                        }
                    }
                });
            }
        }
    }

    /// Gradient of `loss` with respect to each bound parameter slot.
    pub fn grad(&self, loss: Var, params: &ParamVars) -> Result<ParamVector> {
        let g = self.backward(loss)?;
        let mut slots = Vec::with_capacity(params.vars.len());
        for (name, &v) in params.names.iter().zip(&params.vars) {
            let t = g
                .get(self, v)
                .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            slots.push((name.clone(), t));
        }
        ParamVector::new(slots)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, graph: &Graph, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(graph.value(v).shape().to_vec(), g.clone()).expect("grad matches value"))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64], bsz: usize, i: usize, o: usize) -> Vec<f64> {
    let mut out = vec![0.0; bsz * o];
    for row in out.chunks_exact_mut(o.max(1)).take(bsz) {
        row.copy_from_slice(b);
    }
    gemm(MatRef::new(x, bsz, i), MatRef::new(w, i, o), 1.0, &mut out);
    out
}

/// `[K, L-K+1]` view of one channel with `view[j, t] = x[t + j]`, read in
/// place without unfolding.
fn hankel(x: &[f64], k: usize, lo: usize) -> MatRef<'_> {
    MatRef::strided(x, k, lo, 1, 1)
}

/// One sample of a valid convolution: `x [C,L]` to `out [O, L-K+1]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_single(x: &[f64], w: &[f64], b: &[f64], c: usize, l: usize, o: usize, k: usize, out: &mut [f64]) {
    let lo = l - k + 1;
    for (oi, row) in out.chunks_exact_mut(lo).enumerate() {
        row.fill(b[oi]);
    }
    for ci in 0..c {
        let wc = MatRef::strided(&w[ci * k..], o, k, c * k, 1);
        gemm(wc, hankel(&x[ci * l..(ci + 1) * l], k, lo), 1.0, out);
    }
}

/// Loss value and its gradient with respect to every slot of `params`.
pub fn value_and_grad<F>(params: &ParamVector, loss_fn: F) -> Result<(f64, ParamVector)>
where
    F: Fn(&mut Graph, &ParamVars) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = g.bind(params);
    let loss = loss_fn(&mut g, &vars)?;
    let value = g.value(loss).item()?;
    let grad = g.grad(loss, &vars)?;
    Ok((value, grad))
}

/// Hessian-vector product by central differences of the gradient:
/// `(∇f(θ + h v) − ∇f(θ − h v)) / 2h`.
pub fn hvp<F>(loss_fn: F, params: &ParamVector, v: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: Fn(&mut Graph, &ParamVars) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Invalid(format!("hvp step must be positive, got {h}")));
    }
    let (_, gp) = value_and_grad(&params.axpy(h, v)?, &loss_fn)?;
    let (_, gm) = value_and_grad(&params.axpy(-h, v)?, &loss_fn)?;
    let out = gp.axpy(-1.0, &gm)?.scale(0.5 / h);
    if !out.all_finite() {
        return Err(Error::NonFinite("hessian-vector product".into()));
    }
    Ok(out)
}
