//! Float32 training: binary cross-entropy, Adam, reduce-on-plateau keyed to
//! validation accuracy, and best-checkpoint retention.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datakit::LabeledSet;
use crate::error::{Error, Result};
use crate::netgraph::{backward_from_logits, forward, predict, ModelParams, Mode, Network, NetworkConfig, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_clamp_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            plateau_factor: 0.2,
            plateau_patience: 5,
            max_epochs: 50,
            batch_size: 32,
            seed: 0,
            loss_clamp_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    /// Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be >= 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if !(self.epsilon > 0.0) || !(self.loss_clamp_eps > 0.0 && self.loss_clamp_eps < 0.5) {
            return bad("epsilon and loss_clamp_eps must be small positive numbers");
        }
        Ok(())
    }
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped into `[eps, 1 - eps]`.
pub fn bce_loss(y: u8, p: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    let y = y as f64;
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    loss.max(0.0)
}

pub fn bce_batch<T: Scalar>(labels: &[u8], probs: &[T], eps: f64) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, p)| bce_loss(y, p.to_f64().unwrap_or(f64::NAN), eps))
        .sum();
    total / labels.len().max(1) as f64
}

/// First and second moment estimates mirroring the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

fn same_layout<T: Scalar>(a: &ModelParams<T>, b: &ModelParams<T>) -> bool {
    a.layers.len() == b.layers.len()
        && a
            .layers
            .iter()
            .zip(&b.layers)
            .all(|(x, y)| x.weights.shape() == y.weights.shape() && x.bias.len() == y.bias.len())
}

/// One bias-corrected Adam update at `cfg.learning_rate`.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if !same_layout(params, grads) || !same_layout(params, &state.m) || !same_layout(params, &state.v) {
        return Err(Error::ShapeMismatch(
            "params, gradients and optimizer state differ in layout".into(),
        ));
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = cfg.learning_rate;
    let eps = cfg.epsilon;
    for (((w, g), m), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(state.m.values_mut())
        .zip(state.v.values_mut())
    {
        let g = g.to_f64().unwrap();
        let m1 = b1 * m.to_f64().unwrap() + (1.0 - b1) * g;
        let v1 = b2 * v.to_f64().unwrap() + (1.0 - b2) * g * g;
        *m = T::from_f64(m1);
        *v = T::from_f64(v1);
        let m_hat = m1 / c1;
        let v_hat = v1 / c2;
        *w = T::from_f64(w.to_f64().unwrap() - lr * m_hat / (v_hat.sqrt() + eps));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.val_accuracy).reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,learning_rate\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:e}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.learning_rate
            )
            .unwrap();
        }
        out
    }
}

/// Learning rate for the epoch after `history`.
///
/// Replays the reduce-on-plateau rule from the start: an epoch improves
/// when its validation accuracy is strictly greater than the best so far;
/// after `patience` consecutive non-improving epochs the rate is multiplied
/// by `factor` and the wait counter restarts.
pub fn plateau_lr(history: &TrainHistory, cfg: &TrainConfig) -> f64 {
    let accs: Vec<f64> = history.epochs.iter().map(|e| e.val_accuracy).collect();
    plateau_lr_from_accuracies(&accs, cfg)
}

/// [`plateau_lr`] over a bare sequence of per-epoch validation accuracies.
pub fn plateau_lr_from_accuracies(val_accuracies: &[f64], cfg: &TrainConfig) -> f64 {
    let mut lr = cfg.learning_rate;
    let mut best = f64::NEG_INFINITY;
    let mut wait = 0;
    for &acc in val_accuracies {
        if acc > best {
            best = acc;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                wait = 0;
            }
        }
    }
    lr
}

/// Keeps the parameters of the epoch with the highest validation accuracy;
/// ties keep the earlier epoch.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    best: Option<(usize, f64, ModelParams<T>)>,
}

impl<T: Scalar> Default for Checkpoint<T> {
    fn default() -> Self {
        Checkpoint { best: None }
    }
}

impl<T: Scalar> Checkpoint<T> {
    /// Returns true when the offered snapshot became the new best.
    pub fn offer(&mut self, epoch: usize, val_accuracy: f64, params: &ModelParams<T>) -> bool {
        let better = match &self.best {
            None => true,
            Some((_, best, _)) => val_accuracy > *best,
        };
        if better {
            self.best = Some((epoch, val_accuracy, params.clone()));
        }
        better
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn into_best(self) -> Option<(usize, f64, ModelParams<T>)> {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub params: ModelParams<f32>,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Mean loss and accuracy of `params` on `set` (threshold 0.5, ties to
/// the positive class).
pub fn evaluate(net: &Network, params: &ModelParams<f32>, set: &LabeledSet, eps: f64) -> Result<(f64, f64)> {
    let probs = predict(net, params, &set.inputs, 256)?;
    let loss = bce_batch(&set.labels, &probs, eps);
    Ok((loss, accuracy(&set.labels, &probs)))
}

fn accuracy<T: Scalar>(labels: &[u8], probs: &[T]) -> f64 {
    let half = T::from_f64(0.5);
    let correct = labels
        .iter()
        .zip(probs)
        .filter(|(&y, &p)| (p >= half) == (y == 1))
        .count();
    correct as f64 / labels.len().max(1) as f64
}

fn check_set(name: &str, set: &LabeledSet, net: &Network) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Data(format!("{name} set is empty")));
    }
    if set.labels.iter().any(|&y| y > 1) {
        return Err(Error::Data(format!("{name} set has labels outside {{0, 1}}")));
    }
    if set.inputs.shape().with_batch(1) != net.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "{name} samples are {}, network expects {}",
            set.inputs.shape().with_batch(1),
            net.input_shape()
        )));
    }
    Ok(())
}

pub fn train(cfg: &TrainConfig, net_cfg: &NetworkConfig, train_set: &LabeledSet, val_set: &LabeledSet) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = Network::new(net_cfg.clone())?;
    check_set("training", train_set, &net)?;
    check_set("validation", val_set, &net)?;

    let mut params: ModelParams<f32> = net.init_params(cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut history = TrainHistory::default();
    let mut checkpoint = Checkpoint::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut val_accs = Vec::with_capacity(cfg.max_epochs);

    for epoch in 1..=cfg.max_epochs {
        let lr = plateau_lr_from_accuracies(&val_accs, cfg);
        let step_cfg = TrainConfig {
            learning_rate: lr,
            ..cfg.clone()
        };
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0.0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.inputs.gather(idx);
            let y: Vec<u8> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let rec = forward(&net, &params, &x, Mode::Train, rng.gen())?;
            let loss = bce_batch(&y, &rec.probs, cfg.loss_clamp_eps);
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    batch: b,
                    message: format!("loss is {loss}"),
                });
            }
            loss_sum += loss * idx.len() as f64;
            correct += accuracy(&y, &rec.probs) * idx.len() as f64;
            // d(mean BCE)/d(logit) = (p - y) / batch
            let scale = 1.0 / idx.len() as f32;
            let d_logits: Vec<f32> = rec
                .probs
                .iter()
                .zip(&y)
                .map(|(&p, &t)| (p - t as f32) * scale)
                .collect();
            let grads = backward_from_logits(&net, &params, &rec, &d_logits)?;
            adam_step(&mut params, &grads, &mut adam, &step_cfg)?;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = evaluate(&net, &params, val_set, cfg.loss_clamp_eps)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric {
                epoch,
                batch: 0,
                message: format!("validation loss is {val_loss}"),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct / n,
            val_loss,
            val_accuracy,
            learning_rate: lr,
        });
        val_accs.push(val_accuracy);
        checkpoint.offer(epoch, val_accuracy, &params);
    }

    let (best_epoch, best_val_accuracy, params) = checkpoint.into_best().expect("at least one epoch");
    Ok(TrainOutcome {
        network: net,
        params,
        history,
        best_epoch,
        best_val_accuracy,
    })
}
