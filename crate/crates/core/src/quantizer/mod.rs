//! Post-training full-integer quantization.
//!
//! Activations are quantized per tensor (asymmetric, scale from the
//! calibrated range over 255 steps), weights per output channel
//! (symmetric, `max|w| / 127`), biases to int32 at `s_in * s_w`. Each
//! conv/dense output channel gets a fixed-point requantization multiplier
//! for `s_in * s_w / s_out`.
//!
//! Rounding rule shared by the engine and [`fake_quant_forward`]: the
//! int32 accumulator is multiplied by the Q31 multiplier in 64 bits and the
//! product is shifted right by `31 + shift` bits, rounding half away from
//! zero.

mod calibrate;
mod fake_quant;
mod requant;

pub use calibrate::{calibrate, CalibrationStats, EdgeId, EdgeRange};
pub use fake_quant::{fake_quant_forward, fake_quant_logit};
pub use requant::{derive_requant, RequantParams};

use crate::error::{Error, Result};
use crate::netgraph::{Activation, ConvGeom, LayerParams, ModelParams, Network, NetworkConfig, Op};
use crate::tensor::{quantize_affine, ActQuant, QuantParams, Tensor};

/// Smallest scale handed out for a degenerate (all-zero) range.
pub const SCALE_FLOOR: f32 = 1e-7;

/// Scale/zero-point for an activation range (nudged to include zero).
pub fn act_quant_from_range(min: f64, max: f64) -> ActQuant {
    let (min, max) = (min.min(0.0), max.max(0.0));
    let scale = (((max - min) / 255.0) as f32).max(SCALE_FLOOR);
    let zero_point = ((-min / scale as f64).round() - 128.0).clamp(-128.0, 127.0) as i32;
    ActQuant { scale, zero_point }
}

/// Per-output-channel symmetric quantization of a (kh, kw, cin, cout)
/// weight tensor.
pub fn quantize_weights(w: &Tensor<f32>) -> Result<(Tensor<i8>, QuantParams)> {
    let cout = w.shape().c;
    let mut max_abs = vec![0f32; cout];
    for (i, &v) in w.data().iter().enumerate() {
        let c = i % cout;
        max_abs[c] = max_abs[c].max(v.abs());
    }
    let scales: Vec<f32> = max_abs.iter().map(|&m| (m / 127.0).max(SCALE_FLOOR)).collect();
    let qp = QuantParams::per_channel(scales);
    Ok((quantize_affine(w, &qp)?, qp))
}

/// A quantized conv or dense layer: int8 weights in (kh, kw, cin, cout)
/// layout with one scale per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantConv {
    pub weights: Tensor<i8>,
    pub weight_scales: Vec<f32>,
    /// Quantized at `s_in * weight_scales[c]`.
    pub bias: Vec<i32>,
    pub requant: Vec<RequantParams>,
}

impl QuantConv {
    fn build(layer: &LayerParams<f32>, s_in: f32, s_out: f32) -> Result<Self> {
        let (weights, qp) = quantize_weights(&layer.weights)?;
        let QuantParams::PerChannel { scales } = qp else {
            unreachable!("weights are quantized per channel")
        };
        let bias = layer
            .bias
            .iter()
            .zip(&scales)
            .map(|(&b, &s_w)| {
                let q = (b as f64 / (s_in as f64 * s_w as f64)).round();
                q.clamp(i32::MIN as f64, i32::MAX as f64) as i32
            })
            .collect();
        let requant = scales
            .iter()
            .map(|&s_w| derive_requant(s_in as f64, s_w as f64, s_out as f64))
            .collect::<Result<_>>()?;
        Ok(QuantConv {
            weights,
            weight_scales: scales,
            bias,
            requant,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    /// Scale of the int32 bias for channel `c`.
    pub fn bias_scale(&self, s_in: f32, c: usize) -> f64 {
        s_in as f64 * self.weight_scales[c] as f64
    }
}

/// Per-layer quantized data, parallel to the network's nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum QuantLayer {
    Conv(QuantConv),
    Dense(QuantConv),
    Fire {
        squeeze: QuantConv,
        /// Quantization of the squeeze output feeding both expands.
        squeeze_q: ActQuant,
        expand1: QuantConv,
        expand3: QuantConv,
    },
    /// Max pool, global average pool, flatten and dropout carry no data.
    PassThrough,
}

/// An int8 model ready for the integer engine.
///
/// `edges[0]` quantizes the float input and `edges[i + 1]` is the output
/// of layer `i`; the last edge holds the head logit, which is dequantized
/// back to float before the sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    network: Network,
    pub edges: Vec<ActQuant>,
    pub layers: Vec<QuantLayer>,
}

impl QuantizedModel {
    /// Reassembles a model, checking it against the config's geometry.
    pub fn from_parts(config: NetworkConfig, edges: Vec<ActQuant>, layers: Vec<QuantLayer>) -> Result<Self> {
        let network = Network::new(config)?;
        let model = QuantizedModel { network, edges, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn config(&self) -> &NetworkConfig {
        self.network.config()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_quant(&self) -> ActQuant {
        self.edges[0]
    }

    pub fn output_quant(&self) -> ActQuant {
        *self.edges.last().expect("at least one edge")
    }

    /// Number of int8 weight values.
    pub fn weight_count(&self) -> usize {
        self.convs().map(|c| c.weights.len()).sum()
    }

    /// All conv/dense parts in execution order.
    pub fn convs(&self) -> impl Iterator<Item = &QuantConv> {
        self.layers.iter().flat_map(|l| match l {
            QuantLayer::Conv(c) | QuantLayer::Dense(c) => vec![c],
            QuantLayer::Fire { squeeze, expand1, expand3, .. } => vec![squeeze, expand1, expand3],
            QuantLayer::PassThrough => vec![],
        })
    }

    fn validate(&self) -> Result<()> {
        let nodes = self.network.nodes();
        if self.edges.len() != nodes.len() + 1 || self.layers.len() != nodes.len() {
            return Err(Error::Format(format!(
                "{} edges / {} layers for a {}-layer network",
                self.edges.len(),
                self.layers.len(),
                nodes.len()
            )));
        }
        self.edges.iter().try_for_each(|e| e.validate())?;
        let check = |q: &QuantConv, g: &ConvGeom| -> Result<()> {
            check_conv(q, g.weight_shape().len(), g.out_c)
        };
        for (i, (node, layer)) in nodes.iter().zip(&self.layers).enumerate() {
            let ok = match (&node.op, layer) {
                (Op::Conv(g), QuantLayer::Conv(q)) => check(q, g).is_ok(),
                (Op::Dense(g), QuantLayer::Dense(q)) => check_conv(q, g.weight_shape().len(), g.units).is_ok(),
                (Op::Fire(f), QuantLayer::Fire { squeeze, squeeze_q, expand1, expand3 }) => {
                    squeeze_q.validate().is_ok()
                        && check(squeeze, &f.squeeze).is_ok()
                        && check(expand1, &f.expand1).is_ok()
                        && check(expand3, &f.expand3).is_ok()
                }
                (Op::MaxPool(_) | Op::GlobalAvgPool | Op::Flatten | Op::Dropout(_), QuantLayer::PassThrough) => {
                    self.edges[i] == self.edges[i + 1]
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Format(format!("quantized layer {i} does not match the network")));
            }
        }
        Ok(())
    }
}

fn check_conv(q: &QuantConv, weight_len: usize, out_c: usize) -> Result<()> {
    let ok = q.weights.len() == weight_len
        && q.weights.shape().c == out_c
        && q.weight_scales.len() == out_c
        && q.bias.len() == out_c
        && q.requant.len() == out_c
        && q.weight_scales.iter().all(|s| s.is_finite() && *s > 0.0);
    if ok {
        Ok(())
    } else {
        Err(Error::Format("conv/dense quantization tables have inconsistent sizes".into()))
    }
}

/// Converts a trained float model using calibrated activation ranges.
pub fn quantize_model(net: &Network, params: &ModelParams<f32>, stats: &CalibrationStats) -> Result<QuantizedModel> {
    net.check_params(params)?;
    let nodes = net.nodes();
    let edge = |id: EdgeId| -> Result<ActQuant> {
        let r = stats
            .get(id)
            .ok_or_else(|| Error::CalibrationIncomplete(format!("no range recorded for {id}")))?;
        Ok(act_quant_from_range(r.min, r.max))
    };

    let mut edges = vec![edge(EdgeId::Boundary(0))?];
    let mut layers = Vec::with_capacity(nodes.len());
    let mut slot = 0usize;
    for (i, node) in nodes.iter().enumerate() {
        let s_in = edges[i].scale;
        let (layer, out) = match &node.op {
            Op::Conv(_) | Op::Dense(_) => {
                let out = edge(EdgeId::Boundary(i + 1))?;
                let q = QuantConv::build(&params.layers[slot], s_in, out.scale)?;
                slot += 1;
                let layer = if matches!(node.op, Op::Conv(_)) {
                    QuantLayer::Conv(q)
                } else {
                    QuantLayer::Dense(q)
                };
                (layer, out)
            }
            Op::Fire(_) => {
                let squeeze_q = edge(EdgeId::FireSqueeze(i))?;
                let out = edge(EdgeId::Boundary(i + 1))?;
                let squeeze = QuantConv::build(&params.layers[slot], s_in, squeeze_q.scale)?;
                let expand1 = QuantConv::build(&params.layers[slot + 1], squeeze_q.scale, out.scale)?;
                let expand3 = QuantConv::build(&params.layers[slot + 2], squeeze_q.scale, out.scale)?;
                slot += 3;
                (
                    QuantLayer::Fire {
                        squeeze,
                        squeeze_q,
                        expand1,
                        expand3,
                    },
                    out,
                )
            }
            // max pool, averaging and reshapes keep the input's quantization
            Op::MaxPool(_) | Op::GlobalAvgPool | Op::Flatten | Op::Dropout(_) => (QuantLayer::PassThrough, edges[i]),
        };
        layers.push(layer);
        edges.push(out);
    }
    Ok(QuantizedModel {
        network: net.clone(),
        edges,
        layers,
    })
}

/// True when layer `i` of `net` ends in a relu (its output clamps at the
/// zero point).
pub(crate) fn relu_after(op: &Op) -> bool {
    match op {
        Op::Conv(g) => g.relu,
        Op::Dense(g) => g.activation == Activation::Relu,
        Op::Fire(_) => true,
        _ => false,
    }
}
