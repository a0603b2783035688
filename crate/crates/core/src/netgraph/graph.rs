use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Activation;
use super::network::{ModelParams, Network, Op};
use super::ops::{self, Scalar};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Everything the backward pass needs from one forward pass.
///
/// `outputs[i]` is node `i`'s output after its activation, except for the
/// sigmoid head, where it holds the pre-sigmoid logits; `probs` holds the
/// sigmoid of those.
#[derive(Clone, Debug)]
pub struct ActivationRecord<T> {
    pub mode: Mode,
    pub input: Tensor<T>,
    pub outputs: Vec<Tensor<T>>,
    /// Fire modules' squeeze outputs, indexed by node.
    pub squeezes: Vec<Option<Tensor<T>>>,
    /// Dropout keep masks (0 or 1/(1-rate)), indexed by node; `None` in
    /// infer mode.
    pub masks: Vec<Option<Vec<T>>>,
    argmax: Vec<Option<Vec<u32>>>,
    pub probs: Vec<T>,
}

impl<T: Scalar> ActivationRecord<T> {
    pub fn batch(&self) -> usize {
        self.input.shape().n
    }

    pub fn logits(&self) -> &[T] {
        self.outputs.last().expect("non-empty network").data()
    }
}

fn node_input<T>(record: &ActivationRecord<T>, i: usize) -> &Tensor<T> {
    if i == 0 {
        &record.input
    } else {
        &record.outputs[i - 1]
    }
}

/// Runs the network on an N-sample batch. Dropout masks in train mode are
/// drawn from `seed`; infer mode ignores it.
pub fn forward<T: Scalar>(
    net: &Network,
    params: &ModelParams<T>,
    input: &Tensor<T>,
    mode: Mode,
    seed: u64,
) -> Result<ActivationRecord<T>> {
    net.check_params(params)?;
    let expected = net.input_shape();
    let shape = input.shape();
    if shape.with_batch(1) != expected || shape.n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "input {shape} does not match network input {expected}"
        )));
    }
    let batch = shape.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = net.nodes();
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(nodes.len());
    let mut squeezes = vec![None; nodes.len()];
    let mut masks = vec![None; nodes.len()];
    let mut argmax = vec![None; nodes.len()];

    for (i, node) in nodes.iter().enumerate() {
        let x = if i == 0 { input } else { &outputs[i - 1] };
        let out_shape = node.out_shape.with_batch(batch);
        let y = match &node.op {
            Op::Conv(g) => {
                let p = &params.layers[g.param];
                let mut y = vec![T::zero(); out_shape.len()];
                ops::conv_forward(x.data(), batch, g, p.weights.data(), &p.bias, &mut y, g.out_c);
                y
            }
            Op::Dense(g) => {
                let p = &params.layers[g.param];
                let mut y = vec![T::zero(); out_shape.len()];
                ops::matmul(batch, g.inputs, g.units, x.data(), p.weights.data(), &mut y, g.units, false);
                for row in y.chunks_mut(g.units) {
                    for (v, &b) in row.iter_mut().zip(&p.bias) {
                        *v = *v + b;
                        if g.activation == Activation::Relu && *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                }
                y
            }
            Op::Fire(f) => {
                let sp = &params.layers[f.squeeze.param];
                let mut s = vec![T::zero(); batch * f.squeeze.out_shape().len()];
                ops::conv_forward(x.data(), batch, &f.squeeze, sp.weights.data(), &sp.bias, &mut s, f.squeeze.out_c);
                let ldc = f.out_c();
                let mut y = vec![T::zero(); out_shape.len()];
                let e1 = &params.layers[f.expand1.param];
                ops::conv_forward(&s, batch, &f.expand1, e1.weights.data(), &e1.bias, &mut y, ldc);
                let e3 = &params.layers[f.expand3.param];
                ops::conv_forward(&s, batch, &f.expand3, e3.weights.data(), &e3.bias, &mut y[f.expand1.out_c..], ldc);
                squeezes[i] = Some(Tensor::from_vec(f.squeeze.out_shape().with_batch(batch), s)?);
                y
            }
            Op::MaxPool(g) => {
                let (y, arg) = ops::maxpool_forward(x.data(), batch, g);
                argmax[i] = Some(arg);
                y
            }
            Op::GlobalAvgPool => {
                let s = x.shape();
                let hw = s.h * s.w;
                let inv = T::from_f64(1.0 / hw as f64);
                let mut y = vec![T::zero(); batch * s.c];
                for b in 0..batch {
                    for p in 0..hw {
                        let src = &x.data()[(b * hw + p) * s.c..(b * hw + p + 1) * s.c];
                        for (acc, &v) in y[b * s.c..(b + 1) * s.c].iter_mut().zip(src) {
                            *acc = *acc + v;
                        }
                    }
                }
                y.iter_mut().for_each(|v| *v = *v * inv);
                y
            }
            Op::Flatten => x.data().to_vec(),
            Op::Dropout(rate) => match mode {
                Mode::Infer => x.data().to_vec(),
                Mode::Train => {
                    let keep = T::from_f64(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if rng.gen::<f64>() < *rate { T::zero() } else { keep })
                        .collect();
                    let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                    masks[i] = Some(mask);
                    y
                }
            },
        };
        outputs.push(Tensor::from_vec(out_shape, y)?);
    }

    let probs = outputs
        .last()
        .expect("validated network has layers")
        .data()
        .iter()
        .map(|&z| ops::sigmoid(z))
        .collect();
    Ok(ActivationRecord {
        mode,
        input: input.clone(),
        outputs,
        squeezes,
        masks,
        argmax,
        probs,
    })
}

/// Reverse-mode gradients given `d_loss/d_p` for each sample.
pub fn backward<T: Scalar>(
    net: &Network,
    params: &ModelParams<T>,
    record: &ActivationRecord<T>,
    d_p: &[T],
) -> Result<ModelParams<T>> {
    let d_logits: Vec<T> = d_p
        .iter()
        .zip(&record.probs)
        .map(|(&g, &p)| g * p * (T::one() - p))
        .collect();
    backward_from_logits(net, params, record, &d_logits)
}

/// Like [`backward`] but starting from `d_loss/d_logit`, which is
/// numerically stable for a sigmoid + cross-entropy head.
pub fn backward_from_logits<T: Scalar>(
    net: &Network,
    params: &ModelParams<T>,
    record: &ActivationRecord<T>,
    d_logits: &[T],
) -> Result<ModelParams<T>> {
    net.check_params(params)?;
    check_record(net, record)?;
    let batch = record.batch();
    if d_logits.len() != batch {
        return Err(Error::State(format!(
            "{} upstream gradients for a batch of {batch}",
            d_logits.len()
        )));
    }
    let mut grads = params.zeros_like();
    let mut dy: Vec<T> = d_logits.to_vec();

    for (i, node) in net.nodes().iter().enumerate().rev() {
        let x = node_input(record, i);
        let y = &record.outputs[i];
        let want_dx = i > 0;
        dy = match &node.op {
            Op::Conv(g) => {
                if g.relu {
                    relu_mask(&mut dy, y.data());
                }
                let p = &params.layers[g.param];
                let gp = &mut grads.layers[g.param];
                let dx = ops::conv_backward(x.data(), batch, g, p.weights.data(), &dy, g.out_c, gp.weights.data_mut(), &mut gp.bias, want_dx);
                dx.unwrap_or_default()
            }
            Op::Dense(g) => {
                if g.activation == Activation::Relu {
                    relu_mask(&mut dy, y.data());
                }
                let p = &params.layers[g.param];
                let gp = &mut grads.layers[g.param];
                for row in dy.chunks(g.units) {
                    for (acc, &d) in gp.bias.iter_mut().zip(row) {
                        *acc = *acc + d;
                    }
                }
                ops::matmul_at_b(g.inputs, batch, g.units, x.data(), g.inputs, &dy, g.units, gp.weights.data_mut(), true);
                if want_dx {
                    let mut dx = vec![T::zero(); batch * g.inputs];
                    ops::matmul_a_bt(batch, g.units, g.inputs, &dy, g.units, p.weights.data(), &mut dx, false);
                    dx
                } else {
                    Vec::new()
                }
            }
            Op::Fire(f) => {
                relu_mask(&mut dy, y.data());
                let s = record.squeezes[i]
                    .as_ref()
                    .ok_or_else(|| Error::State(format!("missing fire squeeze output at node {i}")))?;
                let ldy = f.out_c();
                let c1 = f.expand1.out_c;
                let (w1, w3) = (&params.layers[f.expand1.param], &params.layers[f.expand3.param]);
                let gp = &mut grads.layers[f.expand1.param];
                let mut ds = ops::conv_backward(s.data(), batch, &f.expand1, w1.weights.data(), &dy, ldy, gp.weights.data_mut(), &mut gp.bias, true)
                    .expect("dx requested");
                let gp = &mut grads.layers[f.expand3.param];
                let ds3 = ops::conv_backward(s.data(), batch, &f.expand3, w3.weights.data(), &dy[c1..], ldy, gp.weights.data_mut(), &mut gp.bias, true)
                    .expect("dx requested");
                for (a, b) in ds.iter_mut().zip(ds3) {
                    *a = *a + b;
                }
                relu_mask(&mut ds, s.data());
                let sp = &params.layers[f.squeeze.param];
                let gp = &mut grads.layers[f.squeeze.param];
                ops::conv_backward(x.data(), batch, &f.squeeze, sp.weights.data(), &ds, f.squeeze.out_c, gp.weights.data_mut(), &mut gp.bias, want_dx)
                    .unwrap_or_default()
            }
            Op::MaxPool(_) => {
                let arg = record.argmax[i]
                    .as_ref()
                    .ok_or_else(|| Error::State(format!("missing pooling indices at node {i}")))?;
                let mut dx = vec![T::zero(); x.len()];
                for (&j, &d) in arg.iter().zip(&dy) {
                    dx[j as usize] = dx[j as usize] + d;
                }
                dx
            }
            Op::GlobalAvgPool => {
                let s = x.shape();
                let hw = s.h * s.w;
                let inv = T::from_f64(1.0 / hw as f64);
                let mut dx = vec![T::zero(); x.len()];
                for b in 0..batch {
                    for p in 0..hw {
                        for c in 0..s.c {
                            dx[(b * hw + p) * s.c + c] = dy[b * s.c + c] * inv;
                        }
                    }
                }
                dx
            }
            Op::Flatten => dy,
            Op::Dropout(_) => match &record.masks[i] {
                Some(mask) => dy.iter().zip(mask).map(|(&d, &m)| d * m).collect(),
                None => dy,
            },
        };
    }
    Ok(grads)
}

fn relu_mask<T: Scalar>(dy: &mut [T], y: &[T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

fn check_record<T: Scalar>(net: &Network, record: &ActivationRecord<T>) -> Result<()> {
    let nodes = net.nodes();
    if record.outputs.len() != nodes.len() {
        return Err(Error::State(format!(
            "record has {} layer outputs, network has {} layers",
            record.outputs.len(),
            nodes.len()
        )));
    }
    let batch = record.batch();
    for (i, (node, out)) in nodes.iter().zip(&record.outputs).enumerate() {
        if out.shape() != node.out_shape.with_batch(batch) {
            return Err(Error::State(format!(
                "record output {i} has shape {}, network expects {}",
                out.shape(),
                node.out_shape.with_batch(batch)
            )));
        }
        if record.mode == Mode::Train && matches!(node.op, Op::Dropout(_)) && record.masks[i].is_none() {
            return Err(Error::State(format!("train-mode record lacks dropout mask {i}")));
        }
    }
    Ok(())
}

/// Sigmoid outputs for a batch in infer mode, evaluated in chunks.
pub fn predict<T: Scalar>(net: &Network, params: &ModelParams<T>, input: &Tensor<T>, chunk: usize) -> Result<Vec<T>> {
    let n = input.shape().n;
    let mut probs = Vec::with_capacity(n);
    let chunk = chunk.max(1);
    for start in (0..n).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let rec = forward(net, params, &input.gather(&idx), Mode::Infer, 0)?;
        probs.extend(rec.probs);
    }
    Ok(probs)
}

/// Convenience for single-sample tests.
pub fn input_tensor<T: Scalar>(net: &Network, data: Vec<T>) -> Result<Tensor<T>> {
    let s: Shape = net.input_shape();
    let n = data.len() / s.item_len().max(1);
    Tensor::from_vec(s.with_batch(n), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{LayerSpec, NetworkConfig, Padding};

    fn cfg(layers: Vec<LayerSpec>, input: [usize; 3]) -> NetworkConfig {
        NetworkConfig {
            name: "t".into(),
            input,
            layers,
        }
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let net = Network::new(cfg(
            vec![LayerSpec::Dropout { rate: 0.5 }, LayerSpec::dense(1, Activation::Sigmoid)],
            [2, 2, 2],
        ))
        .unwrap();
        let params = net.init_params::<f32>(1);
        let x = input_tensor(&net, (0..8).map(|v| v as f32 * 0.3 - 1.0).collect()).unwrap();
        let rec = forward(&net, &params, &x, Mode::Infer, 99).unwrap();
        assert_eq!(rec.outputs[0].data(), x.data());
    }

    #[test]
    fn inverted_dropout_scales_survivors() {
        let net = Network::new(cfg(
            vec![LayerSpec::Dropout { rate: 0.25 }, LayerSpec::dense(1, Activation::Sigmoid)],
            [16, 16, 4],
        ))
        .unwrap();
        let params = net.init_params::<f64>(1);
        let x = Tensor::filled(net.input_shape(), 1.0f64);
        let rec = forward(&net, &params, &x, Mode::Train, 5).unwrap();
        let y = rec.outputs[0].data();
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
        let dropped = y.iter().filter(|&&v| v == 0.0).count() as f64 / y.len() as f64;
        assert!((dropped - 0.25).abs() < 0.06, "{dropped}");
        let again = forward(&net, &params, &x, Mode::Train, 5).unwrap();
        assert_eq!(again.outputs[0].data(), y);
    }

    #[test]
    fn zero_input_relu_conv_gives_zero() {
        let net = Network::new(cfg(
            vec![
                LayerSpec::conv(4, 3, 1, Padding::Same, Activation::Relu),
                LayerSpec::Flatten,
                LayerSpec::dense(1, Activation::Sigmoid),
            ],
            [5, 5, 2],
        ))
        .unwrap();
        let params = net.init_params::<f32>(3);
        let x = Tensor::zeros(net.input_shape());
        let rec = forward(&net, &params, &x, Mode::Infer, 0).unwrap();
        assert!(rec.outputs[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_dense_head_gives_half() {
        let net = Network::new(cfg(vec![LayerSpec::dense(1, Activation::Sigmoid)], [1, 1, 1])).unwrap();
        let mut params = net.init_params::<f32>(0);
        params.layers[0].weights.data_mut()[0] = 0.0;
        let x = input_tensor(&net, vec![0.7f32]).unwrap();
        let rec = forward(&net, &params, &x, Mode::Infer, 0).unwrap();
        assert_eq!(rec.probs, vec![0.5]);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = Network::new(cfg(vec![LayerSpec::dense(1, Activation::Sigmoid)], [2, 2, 1])).unwrap();
        let params = net.init_params::<f32>(0);
        let x = Tensor::zeros(Shape::new(1, 3, 2, 1));
        assert!(matches!(
            forward(&net, &params, &x, Mode::Infer, 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = Network::new(crate::netgraph::zoo("tinymask-ref").unwrap()).unwrap();
        let params = net.init_params::<f32>(0);
        let x = Tensor::filled(net.input_shape().with_batch(2), 0.5f32);
        let rec = forward(&net, &params, &x, Mode::Train, 1).unwrap();
        let g = backward(&net, &params, &rec, &[0.0, 0.0]).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn dropped_units_get_no_gradient() {
        // Dropout directly on the input of the head: a dropped input
        // feature must receive zero weight gradient.
        let net = Network::new(cfg(
            vec![LayerSpec::Dropout { rate: 0.5 }, LayerSpec::dense(1, Activation::Sigmoid)],
            [1, 1, 64],
        ))
        .unwrap();
        let params = net.init_params::<f64>(0);
        let x = Tensor::filled(net.input_shape(), 1.0f64);
        let rec = forward(&net, &params, &x, Mode::Train, 11).unwrap();
        let g = backward(&net, &params, &rec, &[1.0]).unwrap();
        let mask = rec.masks[0].as_ref().unwrap();
        assert!(mask.contains(&0.0));
        for (m, gw) in mask.iter().zip(g.layers[0].weights.data()) {
            assert_eq!(*m == 0.0, *gw == 0.0);
        }
    }

    #[test]
    fn mismatched_record_is_state_error() {
        let a = Network::new(cfg(vec![LayerSpec::dense(1, Activation::Sigmoid)], [1, 1, 2])).unwrap();
        let b = Network::new(cfg(
            vec![LayerSpec::dense(3, Activation::Relu), LayerSpec::dense(1, Activation::Sigmoid)],
            [1, 1, 2],
        ))
        .unwrap();
        let pa = a.init_params::<f64>(0);
        let pb = b.init_params::<f64>(0);
        let x = input_tensor(&a, vec![1.0, 2.0]).unwrap();
        let rec = forward(&a, &pa, &x, Mode::Train, 0).unwrap();
        assert!(matches!(backward(&b, &pb, &rec, &[1.0]), Err(Error::State(_))));
    }
}
