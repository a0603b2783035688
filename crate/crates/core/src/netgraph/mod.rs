//! Network descriptions and the float32 reference executor.
//!
//! A [`NetworkConfig`] is compiled into a [`Network`] (validated, with every
//! layer's geometry resolved), which then runs [`forward`]/[`backward`] on
//! NHWC batches. Kernels are generic over [`Scalar`] so gradient checks can
//! run the identical code path in f64.

mod config;
mod graph;
mod network;
pub mod ops;
mod zoo;

pub use config::{Activation, LayerSpec, NetworkConfig, Padding};
pub use graph::{backward, backward_from_logits, forward, input_tensor, predict, ActivationRecord, Mode};
pub use network::{
    build_network, param_count, ConvGeom, DenseGeom, FireGeom, LayerParams, ModelParams, Network, Node, Op,
    ParamSlot, PoolGeom,
};
pub use ops::Scalar;
pub use zoo::{zoo, ZOO_NAMES};
