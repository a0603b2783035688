//! Real-arithmetic simulation of the integer pipeline, written as plain
//! nested loops over integer-valued `f64`s. It shares no code with the
//! engine kernels and serves as their reference.
//!
//! Accumulators are exact (integers far below 2^53). Requantization scales
//! by the real value of the fixed-point multiplier and rounds half away from
//! zero, which matches the engine except when the exact product sits within
//! `f64` rounding error of a half step.

use super::{relu_after, QuantConv, QuantLayer, QuantizedModel};
use crate::error::{Error, Result};
use crate::netgraph::{ConvGeom, Op};
use crate::tensor::{ActQuant, Tensor};

/// Sigmoid probabilities for each sample of the batch.
pub fn fake_quant_forward(qm: &QuantizedModel, input: &Tensor<f32>) -> Result<Vec<f64>> {
    let out = qm.output_quant();
    Ok(fake_quant_logit(qm, input)?
        .into_iter()
        .map(|q| {
            let z = out.scale as f64 * (q as f64 - out.zero_point as f64);
            1.0 / (1.0 + (-z).exp())
        })
        .collect())
}

/// The int8 head value for each sample of the batch.
pub fn fake_quant_logit(qm: &QuantizedModel, input: &Tensor<f32>) -> Result<Vec<i8>> {
    let expected = qm.network().input_shape();
    let shape = input.shape();
    if shape.n == 0 || shape.with_batch(1) != expected {
        return Err(Error::ShapeMismatch(format!("input {shape} does not match network input {expected}")));
    }
    (0..shape.n)
        .map(|n| {
            let item = input.item(n);
            let q_in = qm.input_quant();
            let mut x: Vec<f64> = item
                .data()
                .iter()
                .map(|&r| ((r as f64 / q_in.scale as f64).round() + q_in.zero_point as f64).clamp(-128.0, 127.0))
                .collect();
            for (i, (node, layer)) in qm.network().nodes().iter().zip(&qm.layers).enumerate() {
                let (e_in, e_out) = (qm.edges[i], qm.edges[i + 1]);
                let relu = relu_after(&node.op);
                x = match (&node.op, layer) {
                    (Op::Conv(g), QuantLayer::Conv(q)) => conv(&x, g, q, e_in, e_out, relu),
                    (Op::Dense(g), QuantLayer::Dense(q)) => conv(&x, &g.as_conv(), q, e_in, e_out, relu),
                    (Op::Fire(f), QuantLayer::Fire { squeeze, squeeze_q, expand1, expand3 }) => {
                        let s = conv(&x, &f.squeeze, squeeze, e_in, *squeeze_q, true);
                        let a = conv(&s, &f.expand1, expand1, *squeeze_q, e_out, true);
                        let b = conv(&s, &f.expand3, expand3, *squeeze_q, e_out, true);
                        let (ca, cb) = (f.expand1.out_c, f.expand3.out_c);
                        let mut y = Vec::with_capacity(a.len() + b.len());
                        for p in 0..a.len() / ca {
                            y.extend_from_slice(&a[p * ca..(p + 1) * ca]);
                            y.extend_from_slice(&b[p * cb..(p + 1) * cb]);
                        }
                        y
                    }
                    (Op::MaxPool(g), _) => {
                        let mut y = Vec::with_capacity(g.out_h * g.out_w * g.c);
                        for oy in 0..g.out_h {
                            for ox in 0..g.out_w {
                                for c in 0..g.c {
                                    let mut m = f64::NEG_INFINITY;
                                    for dy in 0..g.pool {
                                        for dx in 0..g.pool {
                                            let (yy, xx) = (oy * g.stride + dy, ox * g.stride + dx);
                                            m = m.max(x[(yy * g.in_w + xx) * g.c + c]);
                                        }
                                    }
                                    y.push(m);
                                }
                            }
                        }
                        y
                    }
                    (Op::GlobalAvgPool, _) => {
                        let c = node.in_shape.c;
                        let hw = node.in_shape.h * node.in_shape.w;
                        (0..c)
                            .map(|ch| {
                                let sum: f64 = (0..hw).map(|p| x[p * c + ch]).sum();
                                (sum / hw as f64).round()
                            })
                            .collect()
                    }
                    (Op::Flatten | Op::Dropout(_), _) => x,
                    _ => return Err(Error::Format(format!("quantized layer {i} does not match the network"))),
                };
            }
            Ok(x[0] as i8)
        })
        .collect()
}

fn conv(x: &[f64], g: &ConvGeom, q: &QuantConv, e_in: ActQuant, e_out: ActQuant, relu: bool) -> Vec<f64> {
    let w = q.weights.data();
    let zp_in = e_in.zero_point as f64;
    let lo = if relu { (e_out.zero_point as f64).max(-128.0) } else { -128.0 };
    let mut y = Vec::with_capacity(g.out_h * g.out_w * g.out_c);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            for oc in 0..g.out_c {
                let mut acc = q.bias[oc] as f64;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                            continue;
                        }
                        for ic in 0..g.in_c {
                            let xv = x[((iy as usize) * g.in_w + ix as usize) * g.in_c + ic];
                            let wv = w[((ky * g.kw + kx) * g.in_c + ic) * g.out_c + oc] as f64;
                            acc += (xv - zp_in) * wv;
                        }
                    }
                }
                let scaled = (acc * q.requant[oc].to_real()).round();
                y.push((scaled + e_out.zero_point as f64).clamp(lo, 127.0));
            }
        }
    }
    y
}
