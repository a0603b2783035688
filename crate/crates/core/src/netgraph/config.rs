//! Declarative architecture descriptions.
//!
//! A [`NetworkConfig`] is plain data and round-trips through TOML:
//!
//! ```toml
//! name = "toy"
//! input = [8, 8, 3]
//!
//! [[layers]]
//! type = "conv2d"
//! out_channels = 4
//! kernel = [3, 3]
//! stride = 1
//! padding = "same"
//! activation = "relu"
//!
//! [[layers]]
//! type = "max_pool"
//! pool = 2
//! stride = 2
//!
//! [[layers]]
//! type = "flatten"
//!
//! [[layers]]
//! type = "dense"
//! units = 1
//! activation = "sigmoid"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

fn one() -> usize {
    1
}

fn same() -> Padding {
    Padding::Same
}

fn relu() -> Activation {
    Activation::Relu
}

fn default_dropout() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        /// `[kernel_h, kernel_w]`
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "same")]
        padding: Padding,
        #[serde(default = "relu")]
        activation: Activation,
    },
    MaxPool {
        pool: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    Dense {
        units: usize,
        #[serde(default = "relu")]
        activation: Activation,
    },
    Dropout {
        #[serde(default = "default_dropout")]
        rate: f64,
    },
    /// SqueezeNet fire module: 1x1 squeeze conv feeding parallel 1x1 and
    /// 3x3 expand convs (same padding, relu), concatenated on channels.
    Fire {
        squeeze_1x1: usize,
        expand_1x1: usize,
        expand_3x3: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, k: usize, stride: usize, padding: Padding, activation: Activation) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel: [k, k],
            stride,
            padding,
            activation,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    pub fn fire(squeeze_1x1: usize, expand_1x1: usize, expand_3x3: usize) -> Self {
        LayerSpec::Fire {
            squeeze_1x1,
            expand_1x1,
            expand_3x3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Fire { .. } => "fire",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } | LayerSpec::Fire { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    /// `[height, width, channels]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn fire_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Fire { .. }))
            .count()
    }
}
