//! Wengert list of recorded ops and its reverse sweep.

use super::linalg::{col2im3, gemm, im2col3};
use super::{Gradients, LayerSpec, Network, Tensor, LOGIT_CLAMP};
use crate::error::{invalid_arg, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// The first value recorded on a chain-mode tape.
    pub fn input() -> Var {
        Var(0)
    }

    /// Position on the tape; indexes the per-value gradients from [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3 { x: Var, layer: usize, cols: Vec<f64> },
    Conv1 { x: Var, layer: usize },
    Dense { x: Var, layer: usize },
    Relu { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Upsample2 { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factors: Vec<f64> },
    Softmax { x: Var, clamped: Vec<bool> },
    Concat { parts: Vec<Var> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Activation record of one forward pass through one network.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    net_id: u64,
    version: u64,
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => invalid_arg(format!("expected a [c, h, w] tensor, got {s:?}")),
    }
}

impl Tape {
    pub fn new(net: &Network) -> Self {
        Self {
            nodes: Vec::new(),
            net_id: net.id(),
            version: net.version(),
        }
    }

    fn check(&self, net: &Network) -> Result<()> {
        if net.id() != self.net_id || net.version() != self.version {
            return Err(Error::InvalidState(
                "tape was recorded against a different or since-updated network".into(),
            ));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Every recorded value, in recording order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last(&self) -> Option<Var> {
        self.nodes.len().checked_sub(1).map(Var)
    }

    /// Records a constant; gradients with respect to it are still reported.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn conv(&mut self, net: &Network, layer: usize, x: Var) -> Result<Var> {
        self.check(net)?;
        let l = &net.layers()[layer];
        let (c, h, w) = chw(self.value(x))?;
        let hw = h * w;
        let (in_ch, out_ch, three) = match l.spec() {
            LayerSpec::Conv3x3 { in_ch, out_ch } => (in_ch, out_ch, true),
            LayerSpec::Conv1x1 { in_ch, out_ch } => (in_ch, out_ch, false),
            other => return invalid_arg(format!("layer {layer} is {other:?}, not a convolution")),
        };
        if c != in_ch {
            return invalid_arg(format!("layer {layer} expects {in_ch} channels, got {c}"));
        }
        let (wts, bias) = (l.params()[0].data(), l.params()[1].data());
        let mut out = vec![0.0; out_ch * hw];
        for (o, row) in out.chunks_mut(hw).enumerate() {
            row.fill(bias[o]);
        }
        let value_shape = vec![out_ch, h, w];
        if three {
            let cols = im2col3(self.value(x).data(), c, h, w);
            gemm(out_ch, c * 9, hw, wts, false, &cols, false, 1.0, &mut out);
            Ok(self.push(Tensor::new(value_shape, out)?, Op::Conv3 { x, layer, cols }))
        } else {
            gemm(out_ch, c, hw, wts, false, self.value(x).data(), false, 1.0, &mut out);
            Ok(self.push(Tensor::new(value_shape, out)?, Op::Conv1 { x, layer }))
        }
    }

    pub fn dense(&mut self, net: &Network, layer: usize, x: Var) -> Result<Var> {
        self.check(net)?;
        let l = &net.layers()[layer];
        let LayerSpec::Dense { inputs, outputs } = l.spec() else {
            return invalid_arg(format!("layer {layer} is not fully connected"));
        };
        let xv = self.value(x).data();
        if xv.len() != inputs {
            return invalid_arg(format!("layer {layer} expects {inputs} inputs, got {}", xv.len()));
        }
        let mut out = l.params()[1].data().to_vec();
        gemm(outputs, inputs, 1, l.params()[0].data(), false, xv, false, 1.0, &mut out);
        Ok(self.push(Tensor::from_vec(out), Op::Dense { x, layer }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| a.max(0.0)).collect();
        let shape = v.shape().to_vec();
        self.push(Tensor { shape, data: out }, Op::Relu { x })
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.value(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return invalid_arg(format!("cannot pool odd map {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    let o = ch * oh * ow + y * ow + xx;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![c, oh, ow], out)?, Op::MaxPool2 { x, argmax }))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.value(x))?;
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let srow = &src[ch * h * w + (y / 2) * w..][..w];
                let drow = &mut out[ch * oh * ow + y * ow..][..ow];
                for (xx, d) in drow.iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
        Ok(self.push(Tensor::new(vec![c, oh, ow], out)?, Op::Upsample2 { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return invalid_arg(format!("cannot add {:?} and {:?}", va.shape(), vb.shape()));
        }
        let out = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let shape = va.shape().to_vec();
        Ok(self.push(Tensor { shape, data: out }, Op::Add { a, b }))
    }

    /// Elementwise product with constant factors (e.g. an occlusion mask).
    pub fn scale(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let v = self.value(x);
        if factors.len() != v.len() {
            return invalid_arg(format!("{} factors for {} values", factors.len(), v.len()));
        }
        let out = v.data().iter().zip(&factors).map(|(a, f)| a * f).collect();
        let shape = v.shape().to_vec();
        Ok(self.push(Tensor { shape, data: out }, Op::Scale { x, factors }))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x).data();
        let clamped: Vec<bool> = v.iter().map(|a| a.abs() > LOGIT_CLAMP).collect();
        let logits: Vec<f64> = v.iter().map(|a| a.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        self.push(Tensor::from_vec(out), Op::Softmax { x, clamped })
    }

    /// Flattens and concatenates.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).data().iter().copied()).collect();
        self.push(Tensor::from_vec(data), Op::Concat { parts: parts.to_vec() })
    }

    /// Reverse sweep from the given output gradients. Returns parameter
    /// gradients and the gradient of every recorded value (None where no
    /// gradient reached it).
    pub fn backward(&self, net: &Network, seeds: &[(Var, Tensor)]) -> Result<(Gradients, Vec<Option<Tensor>>)> {
        self.check(net)?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.len() != self.value(*v).len() {
                return invalid_arg("seed gradient does not match its value");
            }
            accumulate(&mut grads, *v, g.data(), self.value(*v).shape());
        }
        let mut pgrads = Gradients::zeros_like(net);

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv3 { x, layer, cols } => {
                    let (c, h, w) = chw(self.value(*x))?;
                    let hw = h * w;
                    let l = &net.layers()[*layer];
                    let out_ch = node.value.shape()[0];
                    let pg = pgrads.layer_mut(*layer);
                    gemm(out_ch, hw, c * 9, g.data(), false, cols, true, 1.0, pg[0].data_mut());
                    for (o, row) in g.data().chunks(hw).enumerate() {
                        pg[1].data_mut()[o] += row.iter().sum::<f64>();
                    }
                    let mut dcols = vec![0.0; c * 9 * hw];
                    gemm(c * 9, out_ch, hw, l.params()[0].data(), true, g.data(), false, 0.0, &mut dcols);
                    let dx = col2im3(&dcols, c, h, w);
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::Conv1 { x, layer } => {
                    let (c, h, w) = chw(self.value(*x))?;
                    let hw = h * w;
                    let l = &net.layers()[*layer];
                    let out_ch = node.value.shape()[0];
                    let pg = pgrads.layer_mut(*layer);
                    gemm(out_ch, hw, c, g.data(), false, self.value(*x).data(), true, 1.0, pg[0].data_mut());
                    for (o, row) in g.data().chunks(hw).enumerate() {
                        pg[1].data_mut()[o] += row.iter().sum::<f64>();
                    }
                    let mut dx = vec![0.0; c * hw];
                    gemm(c, out_ch, hw, l.params()[0].data(), true, g.data(), false, 0.0, &mut dx);
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::Dense { x, layer } => {
                    let l = &net.layers()[*layer];
                    let LayerSpec::Dense { inputs, outputs } = l.spec() else {
                        unreachable!()
                    };
                    let pg = pgrads.layer_mut(*layer);
                    gemm(
                        outputs,
                        1,
                        inputs,
                        g.data(),
                        false,
                        self.value(*x).data(),
                        false,
                        1.0,
                        pg[0].data_mut(),
                    );
                    for (b, d) in pg[1].data_mut().iter_mut().zip(g.data()) {
                        *b += d;
                    }
                    let mut dx = vec![0.0; inputs];
                    gemm(inputs, outputs, 1, l.params()[0].data(), true, g.data(), false, 0.0, &mut dx);
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::Relu { x } => {
                    let dx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(d, y)| if *y > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (d, &src) in g.data().iter().zip(argmax) {
                        dx[src] += d;
                    }
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::Upsample2 { x } => {
                    let (c, h, w) = chw(self.value(*x))?;
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut dx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..oh {
                            let grow = &g.data()[ch * oh * ow + y * ow..][..ow];
                            let drow = &mut dx[ch * h * w + (y / 2) * w..][..w];
                            for (xx, d) in grow.iter().enumerate() {
                                drow[xx / 2] += d;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.data(), node.value.shape());
                    accumulate(&mut grads, *b, g.data(), node.value.shape());
                }
                Op::Scale { x, factors } => {
                    let dx: Vec<f64> = g.data().iter().zip(factors).map(|(d, f)| d * f).collect();
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::Softmax { x, clamped } => {
                    let p = node.value.data();
                    let dot: f64 = g.data().iter().zip(p).map(|(a, b)| a * b).sum();
                    let dx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(p)
                        .zip(clamped)
                        .map(|((d, pi), &cl)| if cl { 0.0 } else { pi * (d - dot) })
                        .collect();
                    accumulate(&mut grads, *x, &dx, self.value(*x).shape());
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut grads, *p, &g.data()[off..off + n], self.value(*p).shape());
                        off += n;
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok((pgrads, grads))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &[f64], shape: &[usize]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: g.to_vec(),
            })
        }
    }
}
