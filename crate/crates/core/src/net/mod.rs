//! Small deterministic CNN: conv / ReLU / max-pool / flatten / dense /
//! softmax, exact backprop, and per-block trainability.
//!
//! Parameters are stored at the precision chosen by [`Storage`] (`f32` for
//! normal use and model files, `f64` for gradient checking); every
//! accumulation is done in `f64`.

mod file;
mod train;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Image;

pub use file::{MODEL_MAGIC, MODEL_VERSION};
pub use train::{EpochStats, Strategy, TrainConfig, DENSE_BLOCK};

/// Parameter storage precision.
pub trait Storage: Copy + Send + Sync + fmt::Debug + PartialEq + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Storage for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Storage for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// (channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn flat(n: usize) -> Self {
        Self::new(n, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Channel-major activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_image(image: &Image) -> Self {
        let shape = Shape::new(image.channels, image.height, image.width);
        let mut data = vec![0.0; shape.len()];
        let plane = image.height * image.width;
        for (idx, &v) in image.values.iter().enumerate() {
            let (pixel, ch) = (idx / image.channels, idx % image.channels);
            data[ch * plane + pixel] = v;
        }
        Self { shape, data }
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.height * self.shape.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

    fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            LayerKind::Dense { inputs, outputs } => (inputs * outputs, outputs),
            _ => (0, 0),
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |why: String| Err(Error::InvalidArchitecture(why));
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.channels != in_channels {
                    return bad(format!(
                        "conv expects {in_channels} channels, input is {input}"
                    ));
                }
                if kernel == 0 || stride == 0 {
                    return bad("conv kernel and stride must be positive".into());
                }
                let (h, w) = (input.height + 2 * padding, input.width + 2 * padding);
                if h < kernel || w < kernel {
                    return bad(format!("conv kernel {kernel} larger than padded {input}"));
                }
                Ok(Shape::new(
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ))
            }
            LayerKind::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad("pool window and stride must be positive".into());
                }
                if input.height < window || input.width < window {
                    return bad(format!("pool window {window} larger than {input}"));
                }
                Ok(Shape::new(
                    input.channels,
                    (input.height - window) / stride + 1,
                    (input.width - window) / stride + 1,
                ))
            }
            LayerKind::Relu | LayerKind::Softmax => Ok(input),
            LayerKind::Flatten => Ok(Shape::flat(input.len())),
            LayerKind::Dense { inputs, outputs } => {
                if input.len() != inputs || input.height * input.width != 1 {
                    return bad(format!("dense expects flat {inputs}, input is {input}"));
                }
                Ok(Shape::flat(outputs))
            }
        }
    }
}

/// One layer and the freezable block it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub block_id: u8,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, block_id: u8) -> Self {
        Self { kind, block_id }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S: Storage> {
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

/// Per-layer gradient grids, laid out like [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like<S: Storage>(net: &TinyNet<S>) -> Self {
        Self {
            layers: net
                .params
                .iter()
                .map(|p| LayerGrad {
                    weights: vec![0.0; p.weights.len()],
                    bias: vec![0.0; p.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Result of a forward pass. `activations[0]` is the input and
/// `activations[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub probabilities: Vec<f64>,
    pub activations: Vec<Tensor>,
}

impl Forward {
    /// Pre-softmax scores.
    pub fn logits(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2].data
    }
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub probabilities: Vec<f64>,
    pub gradients: Gradients,
    pub input_grad: Tensor,
}

/// Sequential CNN classifier ending in softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet<S: Storage = f32> {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    params: Vec<LayerParams<S>>,
    trainable: BTreeMap<u8, bool>,
    input_shape: Shape,
    num_classes: usize,
}

fn check_architecture(layers: &[LayerSpec], input: Shape) -> Result<Vec<Shape>> {
    if layers.len() < 2 {
        return Err(Error::InvalidArchitecture(
            "need at least one layer before softmax".into(),
        ));
    }
    for (k, l) in layers.iter().enumerate() {
        let last = k + 1 == layers.len();
        if (l.kind == LayerKind::Softmax) != last {
            return Err(Error::InvalidArchitecture(
                "softmax must appear exactly once, as the final layer".into(),
            ));
        }
    }
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    shapes.push(input);
    for l in layers {
        let next = l.kind.output_shape(*shapes.last().unwrap())?;
        shapes.push(next);
    }
    let logits = shapes[shapes.len() - 2];
    if logits.height * logits.width != 1 {
        return Err(Error::InvalidArchitecture(format!(
            "softmax input must be flat, got {logits}"
        )));
    }
    Ok(shapes)
}

impl<S: Storage> TinyNet<S> {
    /// Builds a net with He-uniform weights (`U(-l, l)`, `l = sqrt(6 / fan_in)`)
/// and zero biases.
    /// All blocks start trainable.
    pub fn new(layers: Vec<LayerSpec>, input_shape: Shape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_init(layers, input_shape, |kind, n_weights| {
            let fan_in = match *kind {
                LayerKind::Conv {
                    in_channels,
                    kernel,
                    ..
                } => in_channels * kernel * kernel,
                LayerKind::Dense { inputs, .. } => inputs,
                _ => 1,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..n_weights)
                .map(|_| S::from_f64(f64::from(rng.random_range(-limit as f32..limit as f32))))
                .collect()
        })
    }

    /// Builds a net with every parameter zero.
    pub fn zeros(layers: Vec<LayerSpec>, input_shape: Shape) -> Result<Self> {
        Self::with_init(layers, input_shape, |_, n| vec![S::from_f64(0.0); n])
    }

    fn with_init(
        layers: Vec<LayerSpec>,
        input_shape: Shape,
        mut init: impl FnMut(&LayerKind, usize) -> Vec<S>,
    ) -> Result<Self> {
        let shapes = check_architecture(&layers, input_shape)?;
        let params = layers
            .iter()
            .map(|l| {
                let (nw, nb) = l.kind.param_counts();
                LayerParams {
                    weights: init(&l.kind, nw),
                    bias: vec![S::from_f64(0.0); nb],
                }
            })
            .collect();
        let trainable = layers.iter().map(|l| (l.block_id, true)).collect();
        let num_classes = shapes[shapes.len() - 1].len();
        Ok(Self {
            layers,
            shapes,
            params,
            trainable,
            input_shape,
            num_classes,
        })
    }

    pub(crate) fn from_parts(
        layers: Vec<LayerSpec>,
        input_shape: Shape,
        params: Vec<LayerParams<S>>,
        trainable: BTreeMap<u8, bool>,
    ) -> Result<Self> {
        let shapes = check_architecture(&layers, input_shape)?;
        for (l, p) in layers.iter().zip(&params) {
            let (nw, nb) = l.kind.param_counts();
            if p.weights.len() != nw || p.bias.len() != nb {
                return Err(Error::InvalidArchitecture(format!(
                    "{} layer parameter count mismatch",
                    l.kind.name()
                )));
            }
        }
        let num_classes = shapes[shapes.len() - 1].len();
        Ok(Self {
            layers,
            shapes,
            params,
            trainable,
            input_shape,
            num_classes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<S>] {
        &mut self.params
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Output shape of layer `k`.
    pub fn output_shape(&self, k: usize) -> Shape {
        self.shapes[k + 1]
    }

    pub fn num_parameters(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    pub fn block_ids(&self) -> Vec<u8> {
        self.trainable.keys().copied().collect()
    }

    pub fn is_trainable(&self, block_id: u8) -> bool {
        self.trainable.get(&block_id).copied().unwrap_or(false)
    }

    pub fn trainable_flags(&self) -> &BTreeMap<u8, bool> {
        &self.trainable
    }

    pub fn set_trainable(&mut self, block_id: u8, trainable: bool) {
        if let Some(flag) = self.trainable.get_mut(&block_id) {
            *flag = trainable;
        }
    }

    /// Index of the last conv layer, if any.
    pub fn last_conv_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Conv { .. }))
    }

    /// Same architecture and values at another storage precision.
    pub fn convert<T: Storage>(&self) -> TinyNet<T> {
        TinyNet {
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| LayerParams {
                    weights: p.weights.iter().map(|w| T::from_f64(w.to_f64())).collect(),
                    bias: p.bias.iter().map(|w| T::from_f64(w.to_f64())).collect(),
                })
                .collect(),
            trainable: self.trainable.clone(),
            input_shape: self.input_shape,
            num_classes: self.num_classes,
        }
    }

    fn check_input(&self, image: &Image) -> Result<Tensor> {
        let t = Tensor::from_image(image);
        if t.shape != self.input_shape {
            return Err(Error::shape(
                format!("net input {}", self.input_shape),
                format!("image {}", t.shape),
            ));
        }
        Ok(t)
    }

    pub fn forward(&self, image: &Image) -> Result<Forward> {
        let input = self.check_input(image)?;
        Ok(self.forward_tensor(input))
    }

    /// Forward pass on an already-shaped tensor. Panics if the shape is wrong.
    pub fn forward_tensor(&self, input: Tensor) -> Forward {
        assert_eq!(input.shape, self.input_shape, "input shape");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        for (k, layer) in self.layers.iter().enumerate() {
            let out = self.layer_forward(k, layer, activations.last().unwrap());
            activations.push(out);
        }
        let probabilities = activations.last().unwrap().data.clone();
        Forward {
            probabilities,
            activations,
        }
    }

    fn layer_forward(&self, k: usize, layer: &LayerSpec, input: &Tensor) -> Tensor {
        let out_shape = self.shapes[k + 1];
        let p = &self.params[k];
        match layer.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let Shape {
                    height: ih,
                    width: iw,
                    ..
                } = input.shape;
                let (oh, ow) = (out_shape.height, out_shape.width);
                let mut out = Tensor::zeros(out_shape);
                for o in 0..out_channels {
                    let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
                    plane.fill(p.bias[o].to_f64());
                    for c in 0..in_channels {
                        let src = input.channel(c);
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let w = p.weights[((o * in_channels + c) * kernel + ky) * kernel + kx]
                                    .to_f64();
                                if w == 0.0 {
                                    continue;
                                }
                                let (y0, y1) = tap_range(oh, ih, ky, stride, padding);
                                let (x0, x1) = tap_range(ow, iw, kx, stride, padding);
                                for y in y0..y1 {
                                    let iy = y * stride + ky - padding;
                                    let row = &src[iy * iw..(iy + 1) * iw];
                                    let dst = &mut plane[y * ow..(y + 1) * ow];
                                    if stride == 1 {
                                        let s0 = x0 + kx - padding;
                                        for (d, &r) in dst[x0..x1].iter_mut().zip(&row[s0..]) {
                                            *d += w * r;
                                        }
                                    } else {
                                        for x in x0..x1 {
                                            dst[x] += w * row[x * stride + kx - padding];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
            LayerKind::Relu => Tensor {
                shape: out_shape,
                data: input.data.iter().map(|&v| v.max(0.0)).collect(),
            },
            LayerKind::MaxPool { window, stride } => {
                let mut out = Tensor::zeros(out_shape);
                let iw = input.shape.width;
                let (oh, ow) = (out_shape.height, out_shape.width);
                for c in 0..out_shape.channels {
                    let src = input.channel(c);
                    for y in 0..oh {
                        for x in 0..ow {
                            let idx = pool_argmax(src, iw, y * stride, x * stride, window);
                            out.data[(c * oh + y) * ow + x] = src[idx];
                        }
                    }
                }
                out
            }
            LayerKind::Flatten => Tensor {
                shape: out_shape,
                data: input.data.clone(),
            },
            LayerKind::Dense { inputs, outputs } => {
                let mut data = Vec::with_capacity(outputs);
                for j in 0..outputs {
                    let row = &p.weights[j * inputs..(j + 1) * inputs];
                    let mut acc = p.bias[j].to_f64();
                    for (w, x) in row.iter().zip(&input.data) {
                        acc += w.to_f64() * x;
                    }
                    data.push(acc);
                }
                Tensor {
                    shape: out_shape,
                    data,
                }
            }
            LayerKind::Softmax => Tensor {
                shape: out_shape,
                data: softmax(&input.data),
            },
        }
    }

    /// Cross-entropy loss, exact parameter gradients and the input gradient.
    pub fn backward(&self, image: &Image, true_label: usize) -> Result<Backward> {
        if true_label >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label: true_label,
                num_classes: self.num_classes,
            });
        }
        let fwd = self.forward(image)?;
        let mut seed = fwd.probabilities.clone();
        seed[true_label] -= 1.0;
        let loss = -fwd.probabilities[true_label].max(f64::MIN_POSITIVE).ln();
        let logits_layer = self.layers.len() - 2;
        let bp = self.backprop(&fwd.activations, logits_layer, seed, None);
        Ok(Backward {
            loss,
            probabilities: fwd.probabilities,
            gradients: bp.gradients,
            input_grad: bp.input_grad,
        })
    }

    /// Feature map at `layer` and the gradient of logit `class` with respect
    /// to it. The hook Grad-CAM style explainers consume.
    pub fn logit_gradient(
        &self,
        image: &Image,
        class: usize,
        layer: usize,
    ) -> Result<(Tensor, Tensor, Forward)> {
        if class >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label: class,
                num_classes: self.num_classes,
            });
        }
        if layer + 1 >= self.layers.len() {
            return Err(Error::InvalidConfig(format!(
                "layer {layer} has no downstream logits"
            )));
        }
        let fwd = self.forward(image)?;
        let mut seed = vec![0.0; self.num_classes];
        seed[class] = 1.0;
        let bp = self.backprop(&fwd.activations, self.layers.len() - 2, seed, Some(layer));
        let grad = bp.captured.expect("captured layer gradient");
        Ok((fwd.activations[layer + 1].clone(), grad, fwd))
    }

    /// Backpropagates `grad_out`, the gradient w.r.t. the output of layer
    /// `start`, down to the input.
    fn backprop(
        &self,
        acts: &[Tensor],
        start: usize,
        grad_out: Vec<f64>,
        capture: Option<usize>,
    ) -> BackpropResult {
        let mut gradients = Gradients::zeros_like(self);
        let mut grad = Tensor {
            shape: self.shapes[start + 1],
            data: grad_out,
        };
        let mut captured = None;
        for k in (0..=start).rev() {
            if capture == Some(k) {
                captured = Some(grad.clone());
            }
            grad = self.layer_backward(k, &acts[k], &grad, &mut gradients.layers[k]);
        }
        BackpropResult {
            gradients,
            input_grad: grad,
            captured,
        }
    }

    fn layer_backward(
        &self,
        k: usize,
        input: &Tensor,
        grad_out: &Tensor,
        param_grad: &mut LayerGrad,
    ) -> Tensor {
        let p = &self.params[k];
        match self.layers[k].kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let Shape {
                    height: ih,
                    width: iw,
                    ..
                } = input.shape;
                let (oh, ow) = (grad_out.shape.height, grad_out.shape.width);
                let mut grad_in = Tensor::zeros(input.shape);
                for o in 0..out_channels {
                    let g = grad_out.channel(o);
                    param_grad.bias[o] += g.iter().sum::<f64>();
                    for c in 0..in_channels {
                        let src = input.channel(c);
                        let dst_off = c * ih * iw;
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let widx = ((o * in_channels + c) * kernel + ky) * kernel + kx;
                                let w = p.weights[widx].to_f64();
                                let mut dw = 0.0;
                                let (y0, y1) = tap_range(oh, ih, ky, stride, padding);
                                let (x0, x1) = tap_range(ow, iw, kx, stride, padding);
                                for y in y0..y1 {
                                    let iy = y * stride + ky - padding;
                                    let g_row = &g[y * ow..(y + 1) * ow];
                                    let s_row = &src[iy * iw..(iy + 1) * iw];
                                    let d_row =
                                        &mut grad_in.data[dst_off + iy * iw..dst_off + (iy + 1) * iw];
                                    if stride == 1 {
                                        let s0 = x0 + kx - padding;
                                        let n = x1 - x0;
                                        for ((&gv, &sv), d) in g_row[x0..x1]
                                            .iter()
                                            .zip(&s_row[s0..s0 + n])
                                            .zip(&mut d_row[s0..s0 + n])
                                        {
                                            dw += gv * sv;
                                            *d += gv * w;
                                        }
                                    } else {
                                        for x in x0..x1 {
                                            let ix = x * stride + kx - padding;
                                            dw += g_row[x] * s_row[ix];
                                            d_row[ix] += g_row[x] * w;
                                        }
                                    }
                                }
                                param_grad.weights[widx] += dw;
                            }
                        }
                    }
                }
                grad_in
            }
            LayerKind::Relu => Tensor {
                shape: input.shape,
                data: input
                    .data
                    .iter()
                    .zip(&grad_out.data)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            },
            LayerKind::MaxPool { window, stride } => {
                let mut grad_in = Tensor::zeros(input.shape);
                let (ih, iw) = (input.shape.height, input.shape.width);
                let (oh, ow) = (grad_out.shape.height, grad_out.shape.width);
                for c in 0..input.shape.channels {
                    let src = input.channel(c);
                    for y in 0..oh {
                        for x in 0..ow {
                            let idx = pool_argmax(src, iw, y * stride, x * stride, window);
                            grad_in.data[c * ih * iw + idx] += grad_out.data[(c * oh + y) * ow + x];
                        }
                    }
                }
                grad_in
            }
            LayerKind::Flatten => Tensor {
                shape: input.shape,
                data: grad_out.data.clone(),
            },
            LayerKind::Dense { inputs, outputs } => {
                let mut grad_in = Tensor::zeros(input.shape);
                for j in 0..outputs {
                    let g = grad_out.data[j];
                    param_grad.bias[j] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let row = &p.weights[j * inputs..(j + 1) * inputs];
                    let grow = &mut param_grad.weights[j * inputs..(j + 1) * inputs];
                    for i in 0..inputs {
                        grow[i] += g * input.data[i];
                        grad_in.data[i] += g * row[i].to_f64();
                    }
                }
                grad_in
            }
            LayerKind::Softmax => unreachable!("softmax is folded into the loss gradient"),
        }
    }

    /// Argmax label and its probability; ties go to the lowest index.
    pub fn predict(&self, image: &Image) -> Result<(usize, f64)> {
        Ok(argmax(&self.forward(image)?.probabilities))
    }

    pub fn probabilities(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.forward(image)?.probabilities)
    }
}

struct BackpropResult {
    gradients: Gradients,
    input_grad: Tensor,
    captured: Option<Tensor>,
}

/// Output positions `[start, end)` whose input index
/// `pos * stride + offset - padding` falls inside `0..in_len`.
fn tap_range(out_len: usize, in_len: usize, offset: usize, stride: usize, padding: usize) -> (usize, usize) {
    let start = padding.saturating_sub(offset).div_ceil(stride);
    let end = if in_len + padding > offset {
        ((in_len - 1 + padding - offset) / stride + 1).min(out_len)
    } else {
        0
    };
    (start.min(end), end)
}

/// Flat index of the first maximum in a pooling window.
#[inline]
fn pool_argmax(src: &[f64], width: usize, y0: usize, x0: usize, window: usize) -> usize {
    let mut best = y0 * width + x0;
    for dy in 0..window {
        for dx in 0..window {
            let idx = (y0 + dy) * width + x0 + dx;
            if src[idx] > src[best] {
                best = idx;
            }
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Lowest index among maximal entries.
pub fn argmax(probabilities: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    (best, probabilities[best])
}

/// Sizes of the reference architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyVggOptions {
    #[serde(default = "one")]
    pub input_channels: usize,
    pub input_side: usize,
    pub light_channels: usize,
    pub block4_channels: usize,
    pub block5_channels: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

fn one() -> usize {
    1
}

impl Default for ToyVggOptions {
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_side: 32,
            light_channels: 2,
            block4_channels: 8,
            block5_channels: 16,
            hidden: 32,
            num_classes: 2,
        }
    }
}

/// Reference "toy-vgg" layer stack: three light 3x3 conv blocks (1-3), two
/// conv+pool blocks (4, 5), and a dense block ([`DENSE_BLOCK`]).
pub fn toy_vgg_layers(opts: &ToyVggOptions) -> Vec<LayerSpec> {
    let conv = |i, o| LayerKind::Conv {
        in_channels: i,
        out_channels: o,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let pool = LayerKind::MaxPool {
        window: 2,
        stride: 2,
    };
    let lc = opts.light_channels;
    let side = opts.input_side / 4;
    let flat = opts.block5_channels * side * side;
    vec![
        LayerSpec::new(conv(opts.input_channels, lc), 1),
        LayerSpec::new(LayerKind::Relu, 1),
        LayerSpec::new(conv(lc, lc), 2),
        LayerSpec::new(LayerKind::Relu, 2),
        LayerSpec::new(conv(lc, lc), 3),
        LayerSpec::new(LayerKind::Relu, 3),
        LayerSpec::new(conv(lc, opts.block4_channels), 4),
        LayerSpec::new(LayerKind::Relu, 4),
        LayerSpec::new(pool, 4),
        LayerSpec::new(conv(opts.block4_channels, opts.block5_channels), 5),
        LayerSpec::new(LayerKind::Relu, 5),
        LayerSpec::new(pool, 5),
        LayerSpec::new(LayerKind::Flatten, DENSE_BLOCK),
        LayerSpec::new(
            LayerKind::Dense {
                inputs: flat,
                outputs: opts.hidden,
            },
            DENSE_BLOCK,
        ),
        LayerSpec::new(LayerKind::Relu, DENSE_BLOCK),
        LayerSpec::new(
            LayerKind::Dense {
                inputs: opts.hidden,
                outputs: opts.num_classes,
            },
            DENSE_BLOCK,
        ),
        LayerSpec::new(LayerKind::Softmax, DENSE_BLOCK),
    ]
}

pub fn toy_vgg<S: Storage>(opts: &ToyVggOptions, seed: u64) -> Result<TinyNet<S>> {
    TinyNet::new(
        toy_vgg_layers(opts),
        Shape::new(opts.input_channels, opts.input_side, opts.input_side),
        seed,
    )
}
