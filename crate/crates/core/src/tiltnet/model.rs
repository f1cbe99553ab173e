//! Network description, parameter store and the forward/backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, BnCache, Conv2d, Linear, Mode};
use super::layers::{relu_backward, relu_forward};
use super::loss::softmax;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tactile::{BiFrame, TiltClass, MAX_FORCE_N, SENSOR_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn tag(&self) -> u8 {
        match self {
            LayerSpec::Conv { .. } => 1,
            LayerSpec::BatchNorm { .. } => 2,
            LayerSpec::Relu => 3,
            LayerSpec::Flatten => 4,
            LayerSpec::Linear { .. } => 5,
        }
    }

    pub fn dims(&self) -> Vec<u32> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                pad,
            } => vec![
                in_channels as u32,
                out_channels as u32,
                kernel as u32,
                pad as u32,
            ],
            LayerSpec::BatchNorm { channels } => vec![channels as u32],
            LayerSpec::Relu | LayerSpec::Flatten => vec![],
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![in_features as u32, out_features as u32],
        }
    }

    pub fn from_tag(tag: u8, dims: &[u32]) -> Option<Self> {
        let d = |i: usize| dims.get(i).map(|&v| v as usize);
        Some(match (tag, dims.len()) {
            (1, 4) => LayerSpec::Conv {
                in_channels: d(0)?,
                out_channels: d(1)?,
                kernel: d(2)?,
                pad: d(3)?,
            },
            (2, 1) => LayerSpec::BatchNorm { channels: d(0)? },
            (3, 0) => LayerSpec::Relu,
            (4, 0) => LayerSpec::Flatten,
            (5, 2) => LayerSpec::Linear {
                in_features: d(0)?,
                out_features: d(1)?,
            },
            _ => return None,
        })
    }

    pub fn dim_count(tag: u8) -> Option<usize> {
        match tag {
            1 => Some(4),
            2 => Some(1),
            3 | 4 => Some(0),
            5 => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    /// `(channels, height, width)` of one input sample.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl Default for ModelSpec {
    /// conv(2->8) bn relu, conv(8->16) bn relu, flatten, 1600-256-128-64-9.
    fn default() -> Self {
        Self::tilt_classifier(&[8, 16], &[256, 128, 64])
    }
}

impl ModelSpec {
    pub fn tilt_classifier(conv_channels: &[usize], hidden: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut c = 2;
        for &out in conv_channels {
            layers.push(LayerSpec::Conv {
                in_channels: c,
                out_channels: out,
                kernel: 3,
                pad: 1,
            });
            layers.push(LayerSpec::BatchNorm { channels: out });
            layers.push(LayerSpec::Relu);
            c = out;
        }
        layers.push(LayerSpec::Flatten);
        let mut f = c * SENSOR_SIDE * SENSOR_SIDE;
        for &h in hidden {
            layers.push(LayerSpec::Linear {
                in_features: f,
                out_features: h,
            });
            layers.push(LayerSpec::Relu);
            f = h;
        }
        layers.push(LayerSpec::Linear {
            in_features: f,
            out_features: TiltClass::COUNT,
        });
        Self {
            input: (2, SENSOR_SIDE, SENSOR_SIDE),
            layers,
        }
    }

    /// Walks the layer chain and returns the flattened output width.
    pub fn validate(&self) -> Result<usize> {
        enum S {
            Spatial(usize, usize, usize),
            Flat(usize),
        }
        let (c, h, w) = self.input;
        let mut s = S::Spatial(c, h, w);
        for (i, l) in self.layers.iter().enumerate() {
            let bad = |m: String| Error::Shape(format!("layer {i}: {m}"));
            s = match (*l, s) {
                (
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        pad,
                    },
                    S::Spatial(c, h, w),
                ) => {
                    if in_channels != c {
                        return Err(bad(format!("conv expects {in_channels} channels, has {c}")));
                    }
                    if kernel == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(bad("conv kernel does not fit".into()));
                    }
                    S::Spatial(out_channels, h + 2 * pad + 1 - kernel, w + 2 * pad + 1 - kernel)
                }
                (LayerSpec::BatchNorm { channels }, S::Spatial(c, h, w)) => {
                    if channels != c {
                        return Err(bad(format!("batchnorm over {channels}, input has {c}")));
                    }
                    S::Spatial(c, h, w)
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, S::Spatial(c, h, w)) => S::Flat(c * h * w),
                (
                    LayerSpec::Linear {
                        in_features,
                        out_features,
                    },
                    S::Flat(f),
                ) => {
                    if in_features != f {
                        return Err(bad(format!("linear expects {in_features}, input has {f}")));
                    }
                    S::Flat(out_features)
                }
                (l, _) => return Err(bad(format!("{l:?} cannot follow the previous layer"))),
            };
        }
        match s {
            S::Flat(f) => Ok(f),
            S::Spatial(..) => Err(Error::Shape("model must end in a flat output".into())),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => out_channels * in_channels * kernel * kernel + out_channels,
                LayerSpec::BatchNorm { channels } => 2 * channels,
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => in_features * out_features + out_features,
                LayerSpec::Relu | LayerSpec::Flatten => 0,
            })
            .sum()
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    pub fn linear_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Linear { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    Flatten,
    Linear(Linear),
}

/// Per-layer values saved by a forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Bn(BnCache),
    Output(Tensor),
    Shape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Weights uniform in `+-sqrt(6 / fan_in)`, biases zero, batchnorm at
    /// identity. The output layer starts at zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    pad,
                } => {
                    let mut c = Conv2d::new(in_channels, out_channels, kernel, pad);
                    let bound = (6.0 / c.fan_in() as f64).sqrt();
                    for w in c.weight.iter_mut() {
                        *w = rng.random_range(-bound..bound);
                    }
                    Layer::Conv(c)
                }
                LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(channels)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let mut lin = Linear::new(in_features, out_features);
                    let bound = (6.0 / in_features as f64).sqrt();
                    for w in lin.weight.iter_mut() {
                        *w = rng.random_range(-bound..bound);
                    }
                    Layer::Linear(lin)
                }
            })
            .collect::<Vec<_>>();
        let mut layers = layers;
        // Zero output layer: an untrained model predicts the uniform distribution.
        if let Some(Layer::Linear(out)) = layers.iter_mut().rev().find(|l| matches!(l, Layer::Linear(_))) {
            out.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(Self { spec, layers })
    }

    /// Rebuilds a model from a spec and parameter tensors in declaration order.
    pub(crate) fn from_parts(spec: ModelSpec, layers: Vec<Layer>) -> Self {
        Self { spec, layers }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&c.weight);
                    out.push(&c.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&b.gamma);
                    out.push(&b.beta);
                }
                Layer::Linear(lin) => {
                    out.push(&lin.weight);
                    out.push(&lin.bias);
                }
                Layer::Relu | Layer::Flatten => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                Layer::Linear(lin) => {
                    out.push(&mut lin.weight);
                    out.push(&mut lin.bias);
                }
                Layer::Relu | Layer::Flatten => {}
            }
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = self.spec.input;
        let s = x.shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::Shape(format!(
                "model expects [N, {c}, {h}, {w}], got {s:?}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            cur = match l {
                Layer::Conv(c) => {
                    let y = c.forward(&cur)?;
                    caches.push(Cache::Input(cur));
                    y
                }
                Layer::BatchNorm(b) => {
                    let (y, cache) = b.forward(&cur, mode)?;
                    caches.push(Cache::Bn(cache));
                    y
                }
                Layer::Relu => {
                    let y = relu_forward(&cur);
                    caches.push(Cache::Output(y.clone()));
                    y
                }
                Layer::Flatten => {
                    let shape = cur.shape().to_vec();
                    let n = cur.batch();
                    let f = cur.item_len();
                    caches.push(Cache::Shape(shape));
                    cur.reshaped(&[n, f])?
                }
                Layer::Linear(lin) => {
                    let y = lin.forward(&cur)?;
                    caches.push(Cache::Input(cur));
                    y
                }
            };
        }
        Ok((cur, Tape { caches }))
    }

    /// Eval-mode logits.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    /// Gradients for every parameter tensor (same order as [`Model::params`])
    /// plus the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor) -> Result<(Vec<Vec<f64>>, Tensor)> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::Shape("tape does not belong to this model".into()));
        }
        let mut grads_rev: Vec<Vec<f64>> = Vec::new();
        let mut g = grad_out.clone();
        for (l, cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = match (l, cache) {
                (Layer::Conv(c), Cache::Input(x)) => {
                    let cg = c.backward(x, &g)?;
                    grads_rev.push(cg.bias);
                    grads_rev.push(cg.weight);
                    cg.input
                }
                (Layer::BatchNorm(b), Cache::Bn(bc)) => {
                    let bg = b.backward(bc, &g)?;
                    grads_rev.push(bg.beta);
                    grads_rev.push(bg.gamma);
                    bg.input
                }
                (Layer::Relu, Cache::Output(y)) => relu_backward(y, &g),
                (Layer::Flatten, Cache::Shape(shape)) => g.reshaped(shape)?,
                (Layer::Linear(lin), Cache::Input(x)) => {
                    let lg = lin.backward(x, &g)?;
                    grads_rev.push(lg.bias);
                    grads_rev.push(lg.weight);
                    lg.input
                }
                _ => return Err(Error::Shape("tape layout does not match model".into())),
            };
        }
        grads_rev.reverse();
        Ok((grads_rev, g))
    }

    /// Folds the batch statistics recorded in a train-mode tape into the
    /// batchnorm running averages.
    pub fn commit_running_stats(&mut self, tape: &Tape) {
        for (l, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (Layer::BatchNorm(b), Cache::Bn(bc)) = (l, cache) {
                b.update_running(bc);
            }
        }
    }
}

/// Scales a pair into the `[2, 10, 10]` network input (left channel first).
pub fn biframe_input(bf: &BiFrame) -> [f64; 2 * SENSOR_SIDE * SENSOR_SIDE] {
    let mut out = [0.0; 2 * SENSOR_SIDE * SENSOR_SIDE];
    let (l, r) = out.split_at_mut(SENSOR_SIDE * SENSOR_SIDE);
    for (o, v) in l.iter_mut().zip(bf.left.forces.iter().flatten()) {
        *o = v / MAX_FORCE_N;
    }
    for (o, v) in r.iter_mut().zip(bf.right.forces.iter().flatten()) {
        *o = v / MAX_FORCE_N;
    }
    out
}

pub fn batch_input<'a>(frames: impl IntoIterator<Item = &'a BiFrame>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for bf in frames {
        data.extend_from_slice(&biframe_input(bf));
        n += 1;
    }
    Tensor::from_vec(&[n, 2, SENSOR_SIDE, SENSOR_SIDE], data).expect("fixed input shape")
}

/// Most likely class and its softmax probability.
pub fn predict_tilt(model: &Model, biframe: &BiFrame) -> Result<(TiltClass, f64)> {
    let logits = model.infer(&batch_input([biframe]))?;
    let p = softmax(logits.item(0));
    let (idx, conf) = argmax(&p);
    Ok((TiltClass::from_index(idx)?, conf))
}

pub(crate) fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}
