use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::netgraph::{forward, Mode, ModelParams, Network};
use crate::tensor::Tensor;

/// Samples per calibration forward pass.
const CHUNK: usize = 64;

/// An activation tensor whose range gets recorded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeId {
    /// `Boundary(0)` is the network input, `Boundary(i + 1)` layer `i`'s
    /// output (the pre-sigmoid logit for the head).
    Boundary(usize),
    /// Squeeze output inside the fire module at layer `i`.
    FireSqueeze(usize),
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeId::Boundary(0) => write!(f, "network input"),
            EdgeId::Boundary(i) => write!(f, "output of layer {}", i - 1),
            EdgeId::FireSqueeze(i) => write!(f, "squeeze of fire layer {i}"),
        }
    }
}

/// Observed range of one edge, nudged to contain zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl EdgeRange {
    fn observe(&mut self, values: &[f32], samples: usize) {
        for &v in values {
            self.min = self.min.min(v as f64);
            self.max = self.max.max(v as f64);
        }
        self.count += samples;
    }

    /// Combines ranges gathered from disjoint sample sets.
    pub fn merge(self, other: EdgeRange) -> EdgeRange {
        EdgeRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            count: self.count + other.count,
        }
    }
}

impl Default for EdgeRange {
    // starts nudged: zero is always inside the range
    fn default() -> Self {
        EdgeRange {
            min: 0.0,
            max: 0.0,
            count: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationStats {
    edges: BTreeMap<EdgeId, EdgeRange>,
}

impl CalibrationStats {
    pub fn get(&self, id: EdgeId) -> Option<&EdgeRange> {
        self.edges.get(&id)
    }

    pub fn remove(&mut self, id: EdgeId) -> Option<EdgeRange> {
        self.edges.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EdgeId, &EdgeRange)> {
        self.edges.iter()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn observe(&mut self, id: EdgeId, values: &[f32], samples: usize) {
        self.edges.entry(id).or_default().observe(values, samples);
    }

    /// Edge-wise union with stats from another sample set.
    pub fn merge(mut self, other: CalibrationStats) -> CalibrationStats {
        for (id, r) in other.edges {
            let merged = match self.edges.get(&id) {
                Some(mine) => mine.merge(r),
                None => r,
            };
            self.edges.insert(id, merged);
        }
        self
    }
}

/// Runs the float network in infer mode over the representative batch and
/// records the range of every activation edge.
pub fn calibrate(net: &Network, params: &ModelParams<f32>, representative: &Tensor<f32>) -> Result<CalibrationStats> {
    let n = representative.shape().n;
    if n == 0 {
        return Err(Error::Data("representative set is empty".into()));
    }
    let expected = net.input_shape().with_batch(n);
    if representative.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "representative set is {}, network expects {expected}",
            representative.shape()
        )));
    }
    let mut stats = CalibrationStats::default();
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let batch = representative.gather(&idx);
        let rec = forward(net, params, &batch, Mode::Infer, 0)?;
        let b = idx.len();
        stats.observe(EdgeId::Boundary(0), batch.data(), b);
        for (i, out) in rec.outputs.iter().enumerate() {
            stats.observe(EdgeId::Boundary(i + 1), out.data(), b);
            if let Some(sq) = &rec.squeezes[i] {
                stats.observe(EdgeId::FireSqueeze(i), sq.data(), b);
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_network, zoo, Activation, LayerSpec, NetworkConfig, Padding};

    fn net() -> (Network, ModelParams<f32>) {
        let cfg = NetworkConfig {
            name: "c".into(),
            input: [6, 6, 1],
            layers: vec![
                LayerSpec::conv(2, 3, 1, Padding::Same, Activation::Relu),
                LayerSpec::fire(2, 1, 1),
                LayerSpec::Flatten,
                LayerSpec::dense(1, Activation::Sigmoid),
            ],
        };
        build_network(cfg, 5).unwrap()
    }

    #[test]
    fn all_zero_batch_gives_zero_ranges() {
        let (net, params) = build_network(zoo("tinymask-ref").unwrap(), 1).unwrap();
        let input = Tensor::zeros(net.input_shape().with_batch(3));
        let stats = calibrate(&net, &params, &input).unwrap();
        assert_eq!(stats.len(), net.nodes().len() + 1);
        for (_, r) in stats.iter() {
            assert_eq!((r.min, r.max, r.count), (0.0, 0.0, 3));
        }
    }

    #[test]
    fn relu_edges_have_zero_min_and_counts_match() {
        let (net, params) = net();
        let data: Vec<f32> = (0..100 * 36).map(|i| ((i * 7919) % 101) as f32 / 100.0 - 0.3).collect();
        let input = Tensor::from_vec(net.input_shape().with_batch(100), data).unwrap();
        let stats = calibrate(&net, &params, &input).unwrap();
        for id in [EdgeId::Boundary(1), EdgeId::Boundary(2), EdgeId::FireSqueeze(1)] {
            let r = stats.get(id).unwrap();
            assert_eq!(r.min, 0.0);
            assert!(r.max > 0.0);
        }
        assert!(stats.get(EdgeId::Boundary(0)).unwrap().min < 0.0);
        assert!(stats.iter().all(|(_, r)| r.count == 100 && r.min <= 0.0 && r.max >= 0.0));
    }

    #[test]
    fn chunked_stats_equal_merged_halves() {
        let (net, params) = net();
        let data: Vec<f32> = (0..80 * 36).map(|i| ((i * 31) % 17) as f32 / 9.0 - 0.5).collect();
        let input = Tensor::from_vec(net.input_shape().with_batch(80), data).unwrap();
        let whole = calibrate(&net, &params, &input).unwrap();
        let a = calibrate(&net, &params, &input.gather(&(0..30).collect::<Vec<_>>())).unwrap();
        let b = calibrate(&net, &params, &input.gather(&(30..80).collect::<Vec<_>>())).unwrap();
        let merged = b.merge(a);
        for ((ia, ra), (ib, rb)) in whole.iter().zip(merged.iter()) {
            assert_eq!(ia, ib);
            assert_eq!(ra.count, rb.count);
            assert!((ra.min - rb.min).abs() < 1e-6 && (ra.max - rb.max).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_or_misshaped_set_errors() {
        let (net, params) = net();
        let empty = Tensor::zeros(net.input_shape().with_batch(0));
        assert!(matches!(calibrate(&net, &params, &empty), Err(Error::Data(_))));
        let wrong = Tensor::zeros(crate::tensor::Shape::new(1, 5, 6, 1));
        assert!(matches!(calibrate(&net, &params, &wrong), Err(Error::ShapeMismatch(_))));
    }
}
