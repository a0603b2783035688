//! Integer-only inference of a [`QuantizedModel`].
//!
//! The float input is quantized once, every layer runs on int8 activations
//! inside a statically planned arena, and only the head value is
//! dequantized for the sigmoid. The model is read-only during inference;
//! each [`Interpreter`] owns its arena, so one model can serve several
//! threads.

mod arena;
mod bench;
pub mod kernels;

pub use arena::{plan_arena, plan_tensors, Arena, Placement, TensorLife};
pub use bench::{bench, layer_macs, BenchReport, LayerMacs, DEFAULT_CLOCK_HZ, DEFAULT_MACS_PER_CYCLE};

use std::ops::Range;

use crate::datakit::Label;
use crate::error::{Error, Result};
use crate::netgraph::{ConvGeom, Op, PoolGeom};
use crate::quantizer::{relu_after, QuantConv, QuantLayer, QuantizedModel};
use crate::tensor::{dequantize_scalar, ActQuant, Shape, Tensor};

/// Framebuffer-sized default arena capacity.
pub const DEFAULT_ARENA_BYTES: usize = 496 * 1024;

/// Label and probability for one image; `p >= 0.5` is Mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub p: f64,
}

impl Prediction {
    pub fn from_probability(p: f64) -> Self {
        let label = if p >= 0.5 { Label::Mask } else { Label::NoMask };
        Prediction { label, p }
    }
}

fn check_reduction(g: &ConvGeom) -> Result<()> {
    if g.k() > kernels::MAX_REDUCTION {
        return Err(Error::UnsupportedShape(format!(
            "reduction length {} exceeds the int32 accumulator bound {}",
            g.k(),
            kernels::MAX_REDUCTION
        )));
    }
    Ok(())
}

fn check_conv_layer(g: &ConvGeom, layer: &QuantConv) -> Result<()> {
    check_reduction(g)?;
    let ok = layer.weights.shape() == g.weight_shape()
        && layer.bias.len() == g.out_c
        && layer.requant.len() == g.out_c;
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "layer data {} does not fit a {}x{}x{}->{} conv",
            layer.weights.shape(),
            g.kh,
            g.kw,
            g.in_c,
            g.out_c
        )))
    }
}

/// Int8 convolution over a batch. `input` must be `n x in_h x in_w x in_c`.
pub fn conv2d_i8(
    input: &Tensor<i8>,
    g: &ConvGeom,
    layer: &QuantConv,
    in_q: ActQuant,
    out_q: ActQuant,
    relu: bool,
) -> Result<Tensor<i8>> {
    check_conv_layer(g, layer)?;
    let s = input.shape();
    if s.with_batch(1) != g.in_shape() {
        return Err(Error::ShapeMismatch(format!("conv input {s}, expected {}", g.in_shape())));
    }
    let out_shape = g.out_shape().with_batch(s.n);
    let mut out = vec![0i8; out_shape.len()];
    let (il, ol) = (s.item_len(), out_shape.item_len());
    for n in 0..s.n {
        kernels::conv2d(
            &input.data()[n * il..(n + 1) * il],
            g,
            layer,
            in_q.zero_point,
            out_q.zero_point,
            relu,
            &mut out[n * ol..(n + 1) * ol],
            g.out_c,
        );
    }
    Tensor::from_vec(out_shape, out)
}

/// Int8 fully connected layer; each batch item is flattened.
pub fn dense_i8(input: &Tensor<i8>, layer: &QuantConv, in_q: ActQuant, out_q: ActQuant, relu: bool) -> Result<Tensor<i8>> {
    let s = input.shape();
    let w = layer.weights.shape();
    let units = layer.out_channels();
    if w.n != 1 || w.h != 1 || w.c != units || layer.requant.len() != units || w.w != s.item_len() {
        return Err(Error::ShapeMismatch(format!("dense weights {w} for input {s}")));
    }
    if w.w > kernels::MAX_REDUCTION {
        return Err(Error::UnsupportedShape(format!("dense fan-in {} too large", w.w)));
    }
    let out_shape = Shape::new(s.n, 1, 1, units);
    let mut out = vec![0i8; out_shape.len()];
    let il = s.item_len();
    for n in 0..s.n {
        kernels::dense(
            &input.data()[n * il..(n + 1) * il],
            layer,
            in_q.zero_point,
            out_q.zero_point,
            relu,
            &mut out[n * units..(n + 1) * units],
        );
    }
    Tensor::from_vec(out_shape, out)
}

/// Int8 max pool without padding.
pub fn maxpool_i8(input: &Tensor<i8>, pool: usize, stride: usize) -> Result<Tensor<i8>> {
    let s = input.shape();
    if pool == 0 || stride == 0 || pool > s.h || pool > s.w {
        return Err(Error::UnsupportedShape(format!("pool window {pool} (stride {stride}) over {s}")));
    }
    let g = PoolGeom {
        in_h: s.h,
        in_w: s.w,
        c: s.c,
        out_h: (s.h - pool) / stride + 1,
        out_w: (s.w - pool) / stride + 1,
        pool,
        stride,
    };
    let out_shape = Shape::new(s.n, g.out_h, g.out_w, s.c);
    let mut out = vec![0i8; out_shape.len()];
    let (il, ol) = (s.item_len(), out_shape.item_len());
    for n in 0..s.n {
        kernels::maxpool(&input.data()[n * il..(n + 1) * il], &g, &mut out[n * ol..(n + 1) * ol]);
    }
    Tensor::from_vec(out_shape, out)
}

/// Disjoint views of the arena: `read` immutable, `write` mutable.
fn split_rw(buf: &mut [i8], read: Range<usize>, write: Range<usize>) -> (&[i8], &mut [i8]) {
    if read.end <= write.start {
        let (lo, hi) = buf.split_at_mut(write.start);
        (&lo[read], &mut hi[..write.len()])
    } else {
        debug_assert!(write.end <= read.start, "live tensors overlap");
        let (lo, hi) = buf.split_at_mut(read.start);
        (&hi[..read.len()], &mut lo[write])
    }
}

/// Runs one model with a private arena.
pub struct Interpreter<'m> {
    model: &'m QuantizedModel,
    arena: Arena,
    buffer: Vec<i8>,
}

impl<'m> Interpreter<'m> {
    pub fn new(model: &'m QuantizedModel, capacity: usize) -> Result<Self> {
        for (node, layer) in model.network().nodes().iter().zip(&model.layers) {
            match (&node.op, layer) {
                (Op::Conv(g), QuantLayer::Conv(q)) => check_conv_layer(g, q)?,
                (Op::Dense(g), QuantLayer::Dense(q)) => check_conv_layer(&g.as_conv(), q)?,
                (Op::Fire(f), QuantLayer::Fire { squeeze, expand1, expand3, .. }) => {
                    check_conv_layer(&f.squeeze, squeeze)?;
                    check_conv_layer(&f.expand1, expand1)?;
                    check_conv_layer(&f.expand3, expand3)?;
                }
                _ => {}
            }
        }
        let arena = plan_arena(model, capacity)?;
        let buffer = vec![0i8; arena.peak];
        Ok(Interpreter { model, arena, buffer })
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    /// Quantized head value for one `1 x H x W x C` image.
    pub fn invoke_raw(&mut self, image: &Tensor<f32>) -> Result<i8> {
        let qm = self.model;
        let expected = qm.network().input_shape();
        if image.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "image {} does not match network input {expected}",
                image.shape()
            )));
        }
        let range = |t: usize| self.arena.placements[t].range();
        let input_q = qm.input_quant();
        let first = range(0);
        for (d, &r) in self.buffer[first].iter_mut().zip(image.data()) {
            *d = input_q.quantize(r);
        }

        for (i, (node, layer)) in qm.network().nodes().iter().zip(&qm.layers).enumerate() {
            let io = self.arena.steps[i];
            let (zp_in, zp_out) = (qm.edges[i].zero_point, qm.edges[i + 1].zero_point);
            let relu = relu_after(&node.op);
            let (r_in, r_out) = (range(io.input), range(io.output));
            match (&node.op, layer) {
                (Op::Flatten | Op::Dropout(_), _) => {}
                (Op::Conv(g), QuantLayer::Conv(q)) => {
                    let (x, y) = split_rw(&mut self.buffer, r_in, r_out);
                    kernels::conv2d(x, g, q, zp_in, zp_out, relu, y, g.out_c);
                }
                (Op::Dense(_), QuantLayer::Dense(q)) => {
                    let (x, y) = split_rw(&mut self.buffer, r_in, r_out);
                    kernels::dense(x, q, zp_in, zp_out, relu, y);
                }
                (Op::MaxPool(g), _) => {
                    let (x, y) = split_rw(&mut self.buffer, r_in, r_out);
                    kernels::maxpool(x, g, y);
                }
                (Op::GlobalAvgPool, _) => {
                    let s = node.in_shape;
                    let (x, y) = split_rw(&mut self.buffer, r_in, r_out);
                    kernels::global_avg_pool(x, s.h * s.w, s.c, y);
                }
                (Op::Fire(f), QuantLayer::Fire { squeeze, squeeze_q, expand1, expand3 }) => {
                    let r_sq = range(io.scratch.expect("fire step has a squeeze tensor"));
                    let zp_sq = squeeze_q.zero_point;
                    {
                        let (x, s) = split_rw(&mut self.buffer, r_in, r_sq.clone());
                        kernels::conv2d(x, &f.squeeze, squeeze, zp_in, zp_sq, true, s, f.squeeze.out_c);
                    }
                    let ldc = f.out_c();
                    let (s, y) = split_rw(&mut self.buffer, r_sq, r_out);
                    kernels::conv2d(s, &f.expand1, expand1, zp_sq, zp_out, true, y, ldc);
                    kernels::conv2d(s, &f.expand3, expand3, zp_sq, zp_out, true, &mut y[f.expand1.out_c..], ldc);
                }
                _ => return Err(Error::Format(format!("quantized layer {i} does not match the network"))),
            }
        }
        let last = self.arena.steps.last().expect("non-empty network").output;
        Ok(self.buffer[range(last)][0])
    }

    pub fn invoke(&mut self, image: &Tensor<f32>) -> Result<Prediction> {
        let q = self.invoke_raw(image)?;
        let out = self.model.output_quant();
        let z = dequantize_scalar(q, out.scale as f64, out.zero_point);
        Ok(Prediction::from_probability(1.0 / (1.0 + (-z).exp())))
    }

    /// Predictions for every item of a batch.
    pub fn invoke_batch(&mut self, images: &Tensor<f32>) -> Result<Vec<Prediction>> {
        (0..images.shape().n).map(|n| self.invoke(&images.item(n))).collect()
    }
}

/// One-shot inference with the default arena capacity.
pub fn infer(qm: &QuantizedModel, image: &Tensor<f32>) -> Result<Prediction> {
    Interpreter::new(qm, DEFAULT_ARENA_BYTES)?.invoke(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_network, zoo, Activation, LayerSpec, NetworkConfig, Padding};
    use crate::quantizer::{calibrate, derive_requant, fake_quant_forward, fake_quant_logit, quantize_model, RequantParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qconv(w: Vec<i8>, shape: Shape, bias: Vec<i32>, rq: RequantParams) -> QuantConv {
        let c = shape.c;
        QuantConv {
            weights: Tensor::from_vec(shape, w).unwrap(),
            weight_scales: vec![0.25; c],
            bias,
            requant: vec![rq; c],
        }
    }

    fn geom(h: usize, w: usize, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvGeom {
        ConvGeom {
            in_h: h,
            in_w: w,
            in_c: cin,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
            out_c: cout,
            kh: k,
            kw: k,
            stride,
            pad_top: pad,
            pad_left: pad,
            relu: false,
            param: 0,
        }
    }

    #[test]
    fn one_by_one_conv_toy() {
        let g = geom(1, 1, 1, 1, 1, 1, 0);
        let layer = qconv(vec![2], Shape::new(1, 1, 1, 1), vec![0], derive_requant(0.5, 0.25, 0.25).unwrap());
        let input = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![4i8]).unwrap();
        let q_in = ActQuant::new(0.5, 0).unwrap();
        let q_out = ActQuant::new(0.25, 0).unwrap();
        let y = conv2d_i8(&input, &g, &layer, q_in, q_out, false).unwrap();
        assert_eq!(y.data(), &[4]);
        assert_eq!(q_out.dequantize(y.data()[0]), 1.0);
        // float oracle: 2.0 * 0.5 = 1.0
        assert_eq!(q_in.dequantize(4) * 2.0 * 0.25, 1.0);
    }

    #[test]
    fn zero_point_input_collapses_to_bias() {
        let g = geom(3, 3, 2, 2, 3, 1, 1);
        let rq = derive_requant(0.5, 0.25, 0.25).unwrap();
        let layer = qconv((0..36).map(|i| (i as i8) - 18).collect(), Shape::new(3, 3, 2, 2), vec![10, -7], rq);
        let input = Tensor::filled(Shape::new(1, 3, 3, 2), 5i8);
        let q = ActQuant::new(0.5, 5).unwrap();
        let out_q = ActQuant::new(0.25, 3).unwrap();
        let y = conv2d_i8(&input, &g, &layer, q, out_q, false).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[5 + 3, -4 + 3]);
        }
    }

    #[test]
    fn dense_identity_and_zero_weights() {
        let one = derive_requant(1.0, 1.0, 1.0).unwrap();
        let mut w = vec![0i8; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1;
        }
        let layer = qconv(w, Shape::new(1, 1, 3, 3), vec![0; 3], one);
        let q = ActQuant::new(1.0, -4).unwrap();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-100i8, 0, 120]).unwrap();
        let y = dense_i8(&x, &layer, q, q, false).unwrap();
        assert_eq!(y.data(), x.data());

        let zero = qconv(vec![0; 3], Shape::new(1, 1, 3, 1), vec![9], derive_requant(0.5, 1.0, 1.0).unwrap());
        let y = dense_i8(&x, &zero, q, ActQuant::new(1.0, 2).unwrap(), false).unwrap();
        assert_eq!(y.data(), &[5 + 2]);
    }

    #[test]
    fn oversized_reduction_is_unsupported() {
        let g = geom(1, 1, kernels::MAX_REDUCTION + 1, 1, 1, 1, 0);
        let layer = qconv(vec![0; g.k()], g.weight_shape(), vec![0], derive_requant(1.0, 1.0, 1.0).unwrap());
        let x = Tensor::zeros(g.in_shape());
        let q = ActQuant::new(1.0, 0).unwrap();
        assert!(matches!(conv2d_i8(&x, &g, &layer, q, q, false), Err(Error::UnsupportedShape(_))));
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::from_vec(Shape::new(1, 2, 2, 1), vec![1i8, 5, 3, 2]).unwrap();
        assert_eq!(maxpool_i8(&x, 2, 2).unwrap().data(), &[5]);
        let c = Tensor::filled(Shape::new(2, 4, 4, 3), -9i8);
        assert_eq!(maxpool_i8(&c, 2, 2).unwrap(), Tensor::filled(Shape::new(2, 2, 2, 3), -9));
        assert!(matches!(maxpool_i8(&x, 3, 1), Err(Error::UnsupportedShape(_))));
    }

    #[test]
    fn maxpool_commutes_with_dequantize() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = ActQuant::new(0.037, -11).unwrap();
        for _ in 0..20 {
            let data: Vec<i8> = (0..5 * 5 * 2).map(|_| rng.gen()).collect();
            let x = Tensor::from_vec(Shape::new(1, 5, 5, 2), data).unwrap();
            let pooled = maxpool_i8(&x, 2, 2).unwrap().map(|v| q.dequantize(v));
            let deq = x.map(|v| q.dequantize(v));
            for oy in 0..2 {
                for ox in 0..2 {
                    for c in 0..2 {
                        let mut m = f32::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(deq.at(0, 2 * oy + dy, 2 * ox + dx, c));
                            }
                        }
                        assert_eq!(pooled.at(0, oy, ox, c), m);
                    }
                }
            }
        }
    }

    fn quantized(cfg: NetworkConfig, seed: u64) -> (QuantizedModel, ChaCha8Rng) {
        let (net, params) = build_network(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = net.input_shape();
        let rep: Vec<f32> = (0..8 * s.item_len()).map(|_| rng.gen()).collect();
        let rep = Tensor::from_vec(s.with_batch(8), rep).unwrap();
        let stats = calibrate(&net, &params, &rep).unwrap();
        (quantize_model(&net, &params, &stats).unwrap(), rng)
    }

    #[test]
    fn engine_matches_fake_quant_on_small_fire_net() {
        let cfg = NetworkConfig {
            name: "small".into(),
            input: [8, 8, 3],
            layers: vec![
                LayerSpec::conv(4, 3, 2, Padding::Same, Activation::Relu),
                LayerSpec::fire(2, 3, 3),
                LayerSpec::MaxPool { pool: 2, stride: 2 },
                LayerSpec::Dropout { rate: 0.3 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::dense(4, Activation::Relu),
                LayerSpec::dense(1, Activation::Sigmoid),
            ],
        };
        let (qm, mut rng) = quantized(cfg, 11);
        let mut it = Interpreter::new(&qm, DEFAULT_ARENA_BYTES).unwrap();
        assert!(it.arena().is_consistent());
        for _ in 0..50 {
            let img: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.gen()).collect();
            let img = Tensor::from_vec(Shape::new(1, 8, 8, 3), img).unwrap();
            let q = it.invoke_raw(&img).unwrap();
            assert_eq!(vec![q], fake_quant_logit(&qm, &img).unwrap());
            let p = it.invoke(&img).unwrap();
            assert_eq!(p.p, fake_quant_forward(&qm, &img).unwrap()[0]);
            assert_eq!(p, infer(&qm, &img).unwrap());
        }
    }

    #[test]
    fn tinymask_fits_framebuffer_and_tiny_arena_fails() {
        let (qm, _) = quantized(zoo("tinymask-ref").unwrap(), 0);
        let arena = plan_arena(&qm, DEFAULT_ARENA_BYTES).unwrap();
        assert!(arena.peak <= DEFAULT_ARENA_BYTES);
        assert!(arena.is_consistent());
        assert!(matches!(plan_arena(&qm, 1), Err(Error::BudgetExceeded { .. })));
        let img = Tensor::filled(qm.network().input_shape(), 0.5f32);
        let a = infer(&qm, &img).unwrap();
        assert_eq!(a, infer(&qm, &img).unwrap());
        let wrong = Tensor::filled(Shape::new(1, 16, 16, 3), 0.5f32);
        assert!(matches!(infer(&qm, &wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn half_probability_is_mask() {
        assert_eq!(Prediction::from_probability(0.5).label, Label::Mask);
        assert_eq!(Prediction::from_probability(0.4999).label, Label::NoMask);
    }
}
