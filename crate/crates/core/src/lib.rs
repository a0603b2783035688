//! Tiny binary-classification CNNs, end to end: float32 training,
//! representative-dataset int8 quantization, and an integer-only inference
//! engine planned against a fixed memory budget.
//!
//! - [`tensor`]: NHWC tensors and the affine quantize/dequantize map
//! - [`netgraph`]: network configs, the reference zoo, float forward/backward
//! - [`trainer`]: binary cross-entropy, Adam, plateau LR schedule, training loop
//! - [`quantizer`]: calibration, weight/bias quantization, requantization multipliers
//! - [`engine`]: int8 kernels, arena planner, MAC/throughput bench
//! - [`modelio`]: `.tqm` container, size and budget reports
//! - [`datakit`]: dataset ingestion, resampling, augmentation, splits, synthetic data
//! - [`evalkit`]: confusion matrices and classification reports

pub mod datakit;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod modelio;
pub mod netgraph;
pub mod quantizer;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
