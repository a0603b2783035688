use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, LayerSpec, NetworkConfig, Padding};
use super::ops::Scalar;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub relu: bool,
    /// Index into [`ModelParams::layers`].
    pub param: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    fn new(
        input: (usize, usize, usize),
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
        relu: bool,
        param: usize,
    ) -> Result<Self> {
        let (in_h, in_w, in_c) = input;
        if out_c == 0 || kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::Config(
                "conv channels, kernel and stride must be >= 1".into(),
            ));
        }
        let (out_h, pad_top) = conv_extent(in_h, kh, stride, padding)?;
        let (out_w, pad_left) = conv_extent(in_w, kw, stride, padding)?;
        Ok(ConvGeom {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            relu,
            param,
        })
    }

    /// Reduction length of one output element.
    pub fn k(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    pub fn macs(&self) -> u64 {
        (self.out_h * self.out_w * self.out_c * self.k()) as u64
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.kh, self.kw, self.in_c, self.out_c)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    pub fn in_shape(&self) -> Shape {
        Shape::new(1, self.in_h, self.in_w, self.in_c)
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(1, self.out_h, self.out_w, self.out_c)
    }
}

/// Output extent and leading pad, TensorFlow convention.
fn conv_extent(input: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if k > input {
                return Err(Error::Config(format!(
                    "kernel {k} larger than input extent {input} with valid padding"
                )));
            }
            Ok(((input - k) / stride + 1, 0))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGeom {
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
    pub param: usize,
}

impl DenseGeom {
    pub fn macs(&self) -> u64 {
        (self.inputs * self.units) as u64
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(1, 1, self.inputs, self.units)
    }

    /// The same layer seen as a 1x1 conv over a 1x1 map.
    pub fn as_conv(&self) -> ConvGeom {
        ConvGeom {
            in_h: 1,
            in_w: 1,
            in_c: self.inputs,
            out_h: 1,
            out_w: 1,
            out_c: self.units,
            kh: 1,
            kw: 1,
            stride: 1,
            pad_top: 0,
            pad_left: 0,
            relu: self.activation == Activation::Relu,
            param: self.param,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pool: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FireGeom {
    pub squeeze: ConvGeom,
    pub expand1: ConvGeom,
    pub expand3: ConvGeom,
}

impl FireGeom {
    pub fn out_c(&self) -> usize {
        self.expand1.out_c + self.expand3.out_c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Conv(ConvGeom),
    MaxPool(PoolGeom),
    GlobalAvgPool,
    Flatten,
    Dense(DenseGeom),
    Dropout(f64),
    Fire(FireGeom),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub op: Op,
    /// Per-sample shapes (batch of one).
    pub in_shape: Shape,
    pub out_shape: Shape,
}

impl Node {
    pub fn macs(&self) -> u64 {
        match &self.op {
            Op::Conv(g) => g.macs(),
            Op::Dense(g) => g.macs(),
            Op::Fire(f) => f.squeeze.macs() + f.expand1.macs() + f.expand3.macs(),
            _ => 0,
        }
    }
}

/// Shape and initializer details of one parameterized conv or dense.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub weights: Shape,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

/// A validated config with every layer's geometry resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    nodes: Vec<Node>,
    slots: Vec<ParamSlot>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let [h, w, c] = config.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Config("input extents must be >= 1".into()));
        }
        match config.layers.last() {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            }) => {}
            _ => {
                return Err(Error::Config(
                    "final layer must be dense(units = 1, activation = sigmoid)".into(),
                ))
            }
        }

        let last = config.layers.len() - 1;
        let mut shape = Shape::new(1, h, w, c);
        let mut nodes = Vec::with_capacity(config.layers.len());
        let mut slots = Vec::new();
        for (i, spec) in config.layers.iter().enumerate() {
            let ctx = |msg: String| Error::Config(format!("layer {i} ({}): {msg}", spec.kind()));
            let hwc = (shape.h, shape.w, shape.c);
            let op = match *spec {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel: [kh, kw],
                    stride,
                    padding,
                    activation,
                } => {
                    if activation == Activation::Sigmoid {
                        return Err(ctx("conv activation must be relu or none".into()));
                    }
                    let relu = activation == Activation::Relu;
                    let g = ConvGeom::new(hwc, out_channels, kh, kw, stride, padding, relu, slots.len())
                        .map_err(|e| ctx(e.to_string()))?;
                    slots.push(conv_slot(&g, activation));
                    Op::Conv(g)
                }
                LayerSpec::MaxPool { pool, stride } => {
                    if pool == 0 || stride == 0 {
                        return Err(ctx("pool and stride must be >= 1".into()));
                    }
                    if pool > shape.h || pool > shape.w {
                        return Err(ctx(format!("window {pool} larger than input {shape}")));
                    }
                    Op::MaxPool(PoolGeom {
                        in_h: shape.h,
                        in_w: shape.w,
                        c: shape.c,
                        out_h: (shape.h - pool) / stride + 1,
                        out_w: (shape.w - pool) / stride + 1,
                        pool,
                        stride,
                    })
                }
                LayerSpec::GlobalAvgPool => Op::GlobalAvgPool,
                LayerSpec::Flatten => Op::Flatten,
                LayerSpec::Dense { units, activation } => {
                    if units == 0 {
                        return Err(ctx("units must be >= 1".into()));
                    }
                    if activation == Activation::Sigmoid && i != last {
                        return Err(ctx("sigmoid is only supported on the output layer".into()));
                    }
                    let g = DenseGeom {
                        inputs: shape.item_len(),
                        units,
                        activation,
                        param: slots.len(),
                    };
                    slots.push(ParamSlot {
                        weights: g.weight_shape(),
                        fan_in: g.inputs,
                        fan_out: units,
                        activation,
                    });
                    Op::Dense(g)
                }
                LayerSpec::Dropout { rate } => {
                    if !(rate > 0.0 && rate < 1.0) {
                        return Err(ctx(format!("dropout rate {rate} outside (0, 1)")));
                    }
                    Op::Dropout(rate)
                }
                LayerSpec::Fire {
                    squeeze_1x1,
                    expand_1x1,
                    expand_3x3,
                } => {
                    let p = slots.len();
                    let squeeze = ConvGeom::new(hwc, squeeze_1x1, 1, 1, 1, Padding::Same, true, p)
                        .map_err(|e| ctx(e.to_string()))?;
                    let sq = (squeeze.out_h, squeeze.out_w, squeeze.out_c);
                    let expand1 = ConvGeom::new(sq, expand_1x1, 1, 1, 1, Padding::Same, true, p + 1)
                        .map_err(|e| ctx(e.to_string()))?;
                    let expand3 = ConvGeom::new(sq, expand_3x3, 3, 3, 1, Padding::Same, true, p + 2)
                        .map_err(|e| ctx(e.to_string()))?;
                    for g in [&squeeze, &expand1, &expand3] {
                        slots.push(conv_slot(g, Activation::Relu));
                    }
                    Op::Fire(FireGeom {
                        squeeze,
                        expand1,
                        expand3,
                    })
                }
            };
            let out_shape = match &op {
                Op::Conv(g) => g.out_shape(),
                Op::MaxPool(g) => Shape::new(1, g.out_h, g.out_w, g.c),
                Op::GlobalAvgPool => Shape::new(1, 1, 1, shape.c),
                Op::Flatten => Shape::new(1, 1, 1, shape.item_len()),
                Op::Dense(g) => Shape::new(1, 1, 1, g.units),
                Op::Dropout(_) => shape,
                Op::Fire(f) => Shape::new(1, f.squeeze.out_h, f.squeeze.out_w, f.out_c()),
            };
            nodes.push(Node {
                op,
                in_shape: shape,
                out_shape,
            });
            shape = out_shape;
        }
        Ok(Network {
            config,
            nodes,
            slots,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn input_shape(&self) -> Shape {
        let [h, w, c] = self.config.input;
        Shape::new(1, h, w, c)
    }

    pub fn param_count(&self) -> usize {
        self.slots.iter().map(|s| s.weights.len() + s.fan_out).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.nodes.iter().map(Node::macs).sum()
    }

    /// He-uniform for relu layers, Glorot-uniform otherwise; zero biases.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ModelParams<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = self
            .slots
            .iter()
            .map(|slot| {
                let limit = match slot.activation {
                    Activation::Relu => (6.0 / slot.fan_in as f64).sqrt(),
                    _ => (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt(),
                };
                let data = (0..slot.weights.len())
                    .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
                    .collect();
                LayerParams {
                    weights: Tensor::from_vec(slot.weights, data).expect("slot shape"),
                    bias: vec![T::zero(); slot.fan_out],
                }
            })
            .collect();
        ModelParams { layers }
    }

    /// Checks that `params` has one correctly-shaped entry per slot.
    pub fn check_params<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        if params.layers.len() != self.slots.len() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} parameterized layers, params have {}",
                self.slots.len(),
                params.layers.len()
            )));
        }
        for (i, (slot, p)) in self.slots.iter().zip(&params.layers).enumerate() {
            if p.weights.shape() != slot.weights || p.bias.len() != slot.fan_out {
                return Err(Error::ShapeMismatch(format!(
                    "param layer {i}: expected weights {} / bias {}, got {} / {}",
                    slot.weights,
                    slot.fan_out,
                    p.weights.shape(),
                    p.bias.len()
                )));
            }
        }
        Ok(())
    }
}

fn conv_slot(g: &ConvGeom, activation: Activation) -> ParamSlot {
    ParamSlot {
        weights: g.weight_shape(),
        fan_in: g.k(),
        fan_out: g.out_c,
        activation,
    }
}

pub fn build_network(cfg: NetworkConfig, seed: u64) -> Result<(Network, ModelParams<f32>)> {
    let net = Network::new(cfg)?;
    let params = net.init_params(seed);
    Ok((net, params))
}

pub fn param_count(cfg: &NetworkConfig) -> Result<usize> {
    Ok(Network::new(cfg.clone())?.param_count())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Weights and biases of every conv/dense, in layer order (a fire module
/// contributes squeeze, expand 1x1, expand 3x3).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.map(|v| U::from_f64(v.to_f64().unwrap())),
                    bias: l.bias.iter().map(|v| U::from_f64(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    /// Every scalar in a fixed order: per layer, weights then bias.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.data_mut().iter_mut().chain(l.bias.iter_mut()))
    }
}
