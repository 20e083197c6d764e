//! Minimal differentiable-network substrate.
//!
//! A [`Network`] is an ordered list of layers that owns every parameter.
//! Forward passes record a [`Tape`]; [`Tape::backward`] walks it in reverse
//! and returns [`Gradients`] aligned with the network's layers. Models that
//! are not a plain chain (the U-net, the generator) drive the tape op by op
//! with their own layer indices.

mod checkpoint;
mod gradcheck;
mod linalg;
mod optim;
mod tape;

use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};

use crate::error::{invalid_arg, Error, Result};
use crate::rng::Rng;

pub use checkpoint::{load_network, read_network, save_network, write_network, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, GradCheckOptions};
pub use optim::RmsProp;
pub use tape::{Tape, Var};

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return invalid_arg(format!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite tensor value");
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return invalid_arg(format!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// Layer kinds understood by the substrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Same-padded 3x3 convolution over `[c, h, w]` maps.
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
    },
    Conv1x1 {
        in_ch: usize,
        out_ch: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    MaxPool2,
    Upsample2,
    /// Softmax over the whole input with logits clamped to `[-30, 30]`.
    SoftmaxHead,
    /// Adds the output of layer `from` (chain mode) to the running value.
    AddSkip {
        from: usize,
    },
}

pub(crate) const LOGIT_CLAMP: f64 = 30.0;

impl LayerSpec {
    pub fn kind_id(&self) -> u8 {
        match self {
            LayerSpec::Conv3x3 { .. } => 0,
            LayerSpec::Conv1x1 { .. } => 1,
            LayerSpec::Dense { .. } => 2,
            LayerSpec::Relu => 3,
            LayerSpec::MaxPool2 => 4,
            LayerSpec::Upsample2 => 5,
            LayerSpec::SoftmaxHead => 6,
            LayerSpec::AddSkip { .. } => 7,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Conv3x3 { in_ch, out_ch } | LayerSpec::Conv1x1 { in_ch, out_ch } => vec![in_ch, out_ch],
            LayerSpec::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerSpec::AddSkip { from } => vec![from],
            _ => Vec::new(),
        }
    }

    pub fn from_parts(kind: u8, dims: &[usize]) -> Result<Self> {
        let want = |n: usize| -> Result<()> {
            if dims.len() == n {
                Ok(())
            } else {
                invalid_arg(format!("layer kind {kind} takes {n} dims, got {}", dims.len()))
            }
        };
        Ok(match kind {
            0 => {
                want(2)?;
                LayerSpec::Conv3x3 {
                    in_ch: dims[0],
                    out_ch: dims[1],
                }
            }
            1 => {
                want(2)?;
                LayerSpec::Conv1x1 {
                    in_ch: dims[0],
                    out_ch: dims[1],
                }
            }
            2 => {
                want(2)?;
                LayerSpec::Dense {
                    inputs: dims[0],
                    outputs: dims[1],
                }
            }
            3 => {
                want(0)?;
                LayerSpec::Relu
            }
            4 => {
                want(0)?;
                LayerSpec::MaxPool2
            }
            5 => {
                want(0)?;
                LayerSpec::Upsample2
            }
            6 => {
                want(0)?;
                LayerSpec::SoftmaxHead
            }
            7 => {
                want(1)?;
                LayerSpec::AddSkip { from: dims[0] }
            }
            other => return invalid_arg(format!("unknown layer kind {other}")),
        })
    }

    /// Shapes of `[weights, bias]`, empty for parameter-free layers.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv3x3 { in_ch, out_ch } => vec![vec![out_ch, in_ch, 3, 3], vec![out_ch]],
            LayerSpec::Conv1x1 { in_ch, out_ch } => vec![vec![out_ch, in_ch], vec![out_ch]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv3x3 { in_ch, .. } => in_ch * 9,
            LayerSpec::Conv1x1 { in_ch, .. } => in_ch,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    /// Output shape for an input of shape `input` in chain mode.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let map3 = |f: &dyn Fn(usize, usize, usize) -> Result<Vec<usize>>| -> Result<Vec<usize>> {
            match input {
                [c, h, w] => f(*c, *h, *w),
                _ => invalid_arg(format!("{self:?} expects a [c, h, w] input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv3x3 { in_ch, out_ch } | LayerSpec::Conv1x1 { in_ch, out_ch } => map3(&|c, h, w| {
                if c != in_ch {
                    return invalid_arg(format!("{self:?} got {c} input channels"));
                }
                Ok(vec![out_ch, h, w])
            }),
            LayerSpec::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return invalid_arg(format!("{self:?} got {n} inputs"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::MaxPool2 => map3(&|c, h, w| {
                if h % 2 != 0 || w % 2 != 0 {
                    return invalid_arg(format!("cannot pool odd map {h}x{w}"));
                }
                Ok(vec![c, h / 2, w / 2])
            }),
            LayerSpec::Upsample2 => map3(&|c, h, w| Ok(vec![c, 2 * h, 2 * w])),
            LayerSpec::Relu | LayerSpec::SoftmaxHead | LayerSpec::AddSkip { .. } => Ok(input.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Tensor>,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

/// Parameter store. Every mutation bumps `version` so tapes recorded before
/// an update are detected as stale.
#[derive(Debug)]
pub struct Network {
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    /// He-initialised weights (normal, variance 2 / fan-in), zero biases.
    pub fn new(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if let LayerSpec::AddSkip { from } = spec {
                if *from >= i {
                    return invalid_arg(format!("layer {i} skips from later layer {from}"));
                }
            }
            let mut params = Vec::new();
            for (p, shape) in spec.param_shapes().into_iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = if p == 0 {
                    let std = (2.0 / spec.fan_in() as f64).sqrt();
                    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    (0..n).map(|_| normal.sample(rng)).collect()
                } else {
                    vec![0.0; n]
                };
                params.push(Tensor::new(shape, data)?);
            }
            layers.push(Layer { spec: *spec, params });
        }
        Ok(Self::from_layers(layers))
    }

    pub(crate) fn from_layers(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    /// Builds a network from explicit parameters; shapes must match the specs.
    pub fn from_parts(parts: Vec<(LayerSpec, Vec<Tensor>)>) -> Result<Self> {
        let mut layers = Vec::with_capacity(parts.len());
        for (spec, params) in parts {
            let shapes = spec.param_shapes();
            if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
                return invalid_arg(format!("parameters do not match {spec:?}"));
            }
            layers.push(Layer { spec, params });
        }
        Ok(Self::from_layers(layers))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Tensor::len).sum()
    }

    /// Mutable access to the parameters of layer `layer`; invalidates tapes.
    pub fn params_mut(&mut self, layer: usize) -> &mut [Tensor] {
        self.version += 1;
        &mut self.layers[layer].params
    }

    /// Parameters flattened in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Chain-mode output shape for `input`, checking every layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for layer in &self.layers {
            if let LayerSpec::AddSkip { from } = layer.spec {
                if shapes[from] != cur {
                    return invalid_arg(format!(
                        "skip from layer {from} has shape {:?}, running value {:?}",
                        shapes[from], cur
                    ));
                }
            }
            cur = layer.spec.output_shape(&cur)?;
            shapes.push(cur.clone());
        }
        Ok(cur)
    }

    /// Runs the layers as a chain. `AddSkip { from }` adds the output of
    /// layer `from`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        self.output_shape(input.shape())?;
        let mut tape = Tape::new(self);
        let mut cur = tape.input(input.clone());
        let mut outs: Vec<Var> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer.spec {
                LayerSpec::Conv3x3 { .. } | LayerSpec::Conv1x1 { .. } => tape.conv(self, i, cur)?,
                LayerSpec::Dense { .. } => tape.dense(self, i, cur)?,
                LayerSpec::Relu => tape.relu(cur),
                LayerSpec::MaxPool2 => tape.max_pool2(cur)?,
                LayerSpec::Upsample2 => tape.upsample2(cur)?,
                LayerSpec::SoftmaxHead => tape.softmax(cur),
                LayerSpec::AddSkip { from } => tape.add(cur, outs[from])?,
            };
            outs.push(cur);
        }
        let out = tape.value(cur).clone();
        Ok((out, tape))
    }

    /// Backward pass of a chain-mode tape from the gradient of its output.
    /// Returns parameter gradients and the gradient of the input.
    pub fn backward(&self, tape: &Tape, output_grad: &Tensor) -> Result<(Gradients, Tensor)> {
        let out = tape.last().ok_or_else(|| Error::InvalidState("empty tape".into()))?;
        let (grads, mut var_grads) = tape.backward(self, &[(out, output_grad.clone())])?;
        let input_grad = var_grads
            .swap_remove(0)
            .unwrap_or_else(|| Tensor::zeros(tape.value(Var::input()).shape()));
        Ok((grads, input_grad))
    }
}

/// Parameter gradients, aligned with [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }

    pub fn layer(&self, i: usize) -> &[Tensor] {
        &self.layers[i]
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> &mut [Tensor] {
        &mut self.layers[i]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flatten().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().flatten().flat_map(|t| t.data()).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().flatten().zip(other.layers.iter().flatten()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.layers.iter_mut().flatten() {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }
}
