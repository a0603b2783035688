//! Analytic MAC counts, host latency and a throughput estimate for a
//! target device.

use std::fmt::Write as _;
use std::time::Instant;

use super::Interpreter;
use crate::error::{Error, Result};
use crate::quantizer::QuantizedModel;
use crate::tensor::Tensor;

/// Target clock of the reference microcontroller.
pub const DEFAULT_CLOCK_HZ: f64 = 480e6;
/// Sustained multiply-accumulates per cycle assumed for the estimate.
pub const DEFAULT_MACS_PER_CYCLE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerMacs {
    pub index: usize,
    pub kind: &'static str,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub model: String,
    pub layers: Vec<LayerMacs>,
    pub total_macs: u64,
    pub arena_peak: usize,
    pub trials: usize,
    /// Median host wall time of one inference.
    pub host_latency_s: f64,
    pub clock_hz: f64,
    pub macs_per_cycle: f64,
    /// `clock_hz * macs_per_cycle / total_macs`; a model-based estimate,
    /// not a measurement.
    pub estimated_fps: f64,
}

impl BenchReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model);
        for l in &self.layers {
            let _ = writeln!(s, "layer {} ({}) macs: {}", l.index, l.kind, l.macs);
        }
        let _ = writeln!(s, "total macs: {}", self.total_macs);
        let _ = writeln!(s, "arena peak bytes: {}", self.arena_peak);
        let _ = writeln!(s, "host latency (median of {}): {:.6} s", self.trials, self.host_latency_s);
        let _ = writeln!(s, "clock hz: {}", self.clock_hz);
        let _ = writeln!(s, "macs per cycle: {}", self.macs_per_cycle);
        let _ = writeln!(s, "estimated device fps (model-based estimate, not measured): {:.2}", self.estimated_fps);
        s
    }

    /// One row per layer followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,macs\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{},{}", l.index, l.kind, l.macs);
        }
        let _ = writeln!(s, "total,,{}", self.total_macs);
        let _ = writeln!(s, "\nmetric,value");
        let _ = writeln!(s, "arena_peak_bytes,{}", self.arena_peak);
        let _ = writeln!(s, "host_latency_s,{:.6}", self.host_latency_s);
        let _ = writeln!(s, "clock_hz,{}", self.clock_hz);
        let _ = writeln!(s, "macs_per_cycle,{}", self.macs_per_cycle);
        let _ = writeln!(s, "estimated_fps,{:.4}", self.estimated_fps);
        s
    }
}

/// MACs of every layer (zero for pooling, reshapes and dropout).
pub fn layer_macs(qm: &QuantizedModel) -> Vec<LayerMacs> {
    qm.network()
        .nodes()
        .iter()
        .zip(&qm.config().layers)
        .enumerate()
        .map(|(index, (node, spec))| LayerMacs {
            index,
            kind: spec.kind(),
            macs: node.macs(),
        })
        .collect()
}

/// Times `trials` inferences on a mid-grey image and estimates device
/// throughput.
pub fn bench(qm: &QuantizedModel, trials: usize, clock_hz: f64, macs_per_cycle: f64) -> Result<BenchReport> {
    if trials == 0 {
        return Err(Error::Config("bench needs at least one trial".into()));
    }
    if !(clock_hz > 0.0 && macs_per_cycle > 0.0) {
        return Err(Error::Config("clock and MACs per cycle must be positive".into()));
    }
    let layers = layer_macs(qm);
    let total_macs: u64 = layers.iter().map(|l| l.macs).sum();
    // bench reports the peak rather than enforcing a budget
    let mut interp = Interpreter::new(qm, usize::MAX)?;
    let image = Tensor::filled(qm.network().input_shape(), 0.5f32);
    let mut times: Vec<f64> = (0..trials)
        .map(|_| {
            let start = Instant::now();
            interp.invoke(&image).map(|_| start.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let host_latency_s = if times.len() % 2 == 1 {
        times[mid]
    } else {
        (times[mid - 1] + times[mid]) / 2.0
    };
    let estimated_fps = if total_macs == 0 {
        f64::INFINITY
    } else {
        clock_hz * macs_per_cycle / total_macs as f64
    };
    Ok(BenchReport {
        model: qm.config().name.clone(),
        layers,
        total_macs,
        arena_peak: interp.arena().peak,
        trials,
        host_latency_s,
        clock_hz,
        macs_per_cycle,
        estimated_fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_network, zoo, Activation, LayerSpec, NetworkConfig, Padding};
    use crate::engine::DEFAULT_ARENA_BYTES;
    use crate::quantizer::{calibrate, quantize_model};

    fn quantize(cfg: NetworkConfig) -> QuantizedModel {
        let (net, params) = build_network(cfg, 0).unwrap();
        let rep = Tensor::filled(net.input_shape().with_batch(2), 0.4f32);
        let stats = calibrate(&net, &params, &rep).unwrap();
        quantize_model(&net, &params, &stats).unwrap()
    }

    #[test]
    fn documented_mac_counts() {
        let cfg = NetworkConfig {
            name: "macs".into(),
            input: [32, 32, 3],
            layers: vec![
                LayerSpec::conv(16, 3, 1, Padding::Same, Activation::Relu),
                LayerSpec::MaxPool { pool: 4, stride: 4 },
                LayerSpec::conv(16, 1, 2, Padding::Same, Activation::Relu),
                LayerSpec::Flatten,
                LayerSpec::dense(1, Activation::Sigmoid),
            ],
        };
        let qm = quantize(cfg);
        let macs = layer_macs(&qm);
        assert_eq!(macs[0].macs, 442_368);
        assert_eq!(macs[1].macs, 0);
        // 8x8 pooled map, stride 2 -> 4x4x16 = 256 inputs to the head
        assert_eq!(macs[4].macs, 256);
        let report = bench(&qm, 3, DEFAULT_CLOCK_HZ, DEFAULT_MACS_PER_CYCLE).unwrap();
        assert_eq!(report.total_macs, macs.iter().map(|l| l.macs).sum::<u64>());
        assert!((report.estimated_fps - 480e6 / report.total_macs as f64).abs() < 1e-6);
        assert!(report.to_text().contains("estimate"));
        assert!(report.to_csv().starts_with("layer,kind,macs\n0,conv2d,442368\n"));
    }

    #[test]
    fn dense_only_model() {
        let cfg = NetworkConfig {
            name: "dense".into(),
            input: [1, 1, 1024],
            layers: vec![LayerSpec::Flatten, LayerSpec::dense(1, Activation::Sigmoid)],
        };
        let report = bench(&quantize(cfg), 5, 1e6, 2.0).unwrap();
        assert_eq!(report.total_macs, 1024);
        assert_eq!(report.trials, 5);
        assert!((report.estimated_fps - 2e6 / 1024.0).abs() < 1e-9);
    }

    #[test]
    fn zoo_totals_are_additive_and_zero_trials_rejected() {
        let qm = quantize(zoo("tinymask-ref").unwrap());
        let report = bench(&qm, 1, DEFAULT_CLOCK_HZ, 1.0).unwrap();
        assert_eq!(report.total_macs, qm.network().total_macs());
        assert!(report.arena_peak <= DEFAULT_ARENA_BYTES);
        assert!(bench(&qm, 0, DEFAULT_CLOCK_HZ, 1.0).is_err());
    }
}
