//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinymask::netgraph::ops::maxpool_forward;
use tinymask::netgraph::{
    backward_from_logits, forward, Activation, ActivationRecord, LayerSpec, ModelParams, Mode, Network,
    NetworkConfig, Op, Padding,
};
use tinymask::tensor::{Shape, Tensor};

pub const FD_STEP: f64 = 1e-3;
pub const MAX_PARAMS: usize = 1000;

/// Layer kinds exercised by the gradient check.
pub const GRAD_CASES: [&str; 6] = ["conv2d", "max_pool", "global_avg_pool", "dense", "dropout", "fire"];

fn activation(rng: &mut ChaCha8Rng) -> Activation {
    if rng.gen_bool(0.5) {
        Activation::Relu
    } else {
        Activation::None
    }
}

fn padding(rng: &mut ChaCha8Rng) -> Padding {
    if rng.gen_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

/// A random network of at most [`MAX_PARAMS`] parameters built around one
/// layer of kind `case`, ending in a single sigmoid unit.
pub fn random_config(case: &str, seed: u64) -> NetworkConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.gen_range(4..=7);
    let input = [side, side + rng.gen_range(0..2), rng.gen_range(1..=3)];
    let head = LayerSpec::dense(1, Activation::Sigmoid);
    let layers = match case {
        "conv2d" => vec![
            LayerSpec::Conv2d {
                out_channels: rng.gen_range(1..=4),
                kernel: [rng.gen_range(1..=3), rng.gen_range(1..=3)],
                stride: rng.gen_range(1..=2),
                padding: padding(&mut rng),
                activation: activation(&mut rng),
            },
            LayerSpec::conv(2, 3, 1, Padding::Same, activation(&mut rng)),
            LayerSpec::Flatten,
            head,
        ],
        "max_pool" => vec![
            LayerSpec::conv(rng.gen_range(1..=3), 3, 1, Padding::Same, activation(&mut rng)),
            LayerSpec::MaxPool {
                pool: 2,
                stride: rng.gen_range(1..=2),
            },
            LayerSpec::Flatten,
            head,
        ],
        "global_avg_pool" => vec![
            LayerSpec::conv(rng.gen_range(2..=6), 3, 1, padding(&mut rng), activation(&mut rng)),
            LayerSpec::GlobalAvgPool,
            head,
        ],
        "dense" => vec![
            LayerSpec::Flatten,
            LayerSpec::dense(rng.gen_range(1..=5), activation(&mut rng)),
            LayerSpec::dense(rng.gen_range(1..=4), activation(&mut rng)),
            head,
        ],
        "dropout" => vec![
            LayerSpec::conv(rng.gen_range(1..=3), 3, 2, Padding::Same, Activation::Relu),
            LayerSpec::Dropout {
                rate: rng.gen_range(0.1..0.6),
            },
            LayerSpec::Flatten,
            LayerSpec::dense(3, Activation::Relu),
            LayerSpec::Dropout { rate: 0.3 },
            head,
        ],
        "fire" => vec![
            LayerSpec::conv(rng.gen_range(2..=4), 1, 1, Padding::Same, Activation::Relu),
            LayerSpec::fire(rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)),
            LayerSpec::GlobalAvgPool,
            head,
        ],
        other => panic!("unknown case {other}"),
    };
    NetworkConfig {
        name: format!("{case}-{seed}"),
        input,
        layers,
    }
}

/// Nonsmooth structure of a forward pass: which units are exactly zero and
/// which inputs every max pool selected. Finite differences are only
/// meaningful when this is the same at `theta - h`, `theta` and `theta + h`.
fn pattern(net: &Network, rec: &ActivationRecord<f64>) -> Vec<u64> {
    let batch = rec.batch();
    let mut out = Vec::new();
    for (i, node) in net.nodes().iter().enumerate() {
        let zeros = |t: &Tensor<f64>| t.data().iter().map(|&v| (v == 0.0) as u64).collect::<Vec<_>>();
        out.extend(zeros(&rec.outputs[i]));
        if let Some(sq) = &rec.squeezes[i] {
            out.extend(zeros(sq));
        }
        if let Op::MaxPool(g) = &node.op {
            let input = if i == 0 { &rec.input } else { &rec.outputs[i - 1] };
            out.extend(maxpool_forward(input.data(), batch, g).1.into_iter().map(u64::from));
        }
    }
    out
}

/// Mean binary cross-entropy from logits, `softplus(z) - y z`.
fn mean_bce(logits: &[f64], labels: &[f64]) -> f64 {
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
    logits.iter().zip(labels).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / logits.len() as f64
}

#[derive(Debug)]
pub struct GradReport {
    pub params: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Compares backward against central differences of the mean BCE for
/// every parameter of `cfg`, in f64.
pub fn grad_check(cfg: &NetworkConfig, seed: u64, batch: usize) -> GradReport {
    let net = Network::new(cfg.clone()).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut params: ModelParams<f64> = net.init_params(seed);
    // non-zero biases so every term of the bias gradient is exercised
    for l in &mut params.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
    let shape = net.input_shape().with_batch(batch);
    let x = Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<f64> = (0..batch).map(|_| rng.gen_range(0..2) as f64).collect();
    let dropout_seed: u64 = rng.gen();

    let run = |p: &ModelParams<f64>| forward(&net, p, &x, Mode::Train, dropout_seed).unwrap();
    let rec = run(&params);
    let base = pattern(&net, &rec);
    let d_logits: Vec<f64> = rec
        .probs
        .iter()
        .zip(&labels)
        .map(|(&p, &y)| (p - y) / batch as f64)
        .collect();
    let grads = backward_from_logits(&net, &params, &rec, &d_logits).unwrap();
    let analytic: Vec<f64> = grads.values().copied().collect();

    let mut report = GradReport {
        params: params.count(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
    };
    for (k, &a) in analytic.iter().enumerate() {
        let shifted = |delta: f64| {
            let mut p = params.clone();
            *p.values_mut().nth(k).unwrap() += delta;
            let r = run(&p);
            (mean_bce(r.logits(), &labels), pattern(&net, &r))
        };
        let (plus, pat_plus) = shifted(FD_STEP);
        let (minus, pat_minus) = shifted(-FD_STEP);
        if pat_plus != base || pat_minus != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    report
}

/// Uniform integer-valued `Shape` helper for random tensors.
pub fn random_i8(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<i8> {
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen()).collect()).unwrap()
}
