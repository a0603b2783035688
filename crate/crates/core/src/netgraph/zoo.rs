//! Reference architectures.

use super::config::{Activation, LayerSpec, NetworkConfig, Padding};
use crate::error::{Error, Result};

pub const ZOO_NAMES: [&str; 3] = ["tinymask-ref", "squeezenet-mask", "squeezenet-mask-small"];

pub fn zoo(name: &str) -> Result<NetworkConfig> {
    match name {
        "tinymask-ref" => Ok(tinymask_ref()),
        "squeezenet-mask" => Ok(squeezenet_mask()),
        "squeezenet-mask-small" => Ok(squeezenet_mask_small()),
        other => Err(Error::NotFound(format!(
            "unknown architecture `{other}` (known: {})",
            ZOO_NAMES.join(", ")
        ))),
    }
}

/// Three conv/pool stages and one hidden dense layer, dropout after every
/// parameterized layer. 128,237 parameters.
fn tinymask_ref() -> NetworkConfig {
    let conv = |c| LayerSpec::conv(c, 3, 1, Padding::Same, Activation::Relu);
    let drop = || LayerSpec::Dropout { rate: 0.2 };
    let pool = || LayerSpec::MaxPool { pool: 2, stride: 2 };
    NetworkConfig {
        name: "tinymask-ref".into(),
        input: [32, 32, 3],
        layers: vec![
            conv(16),
            drop(),
            pool(),
            conv(32),
            drop(),
            pool(),
            conv(64),
            drop(),
            pool(),
            LayerSpec::Flatten,
            LayerSpec::dense(102, Activation::Relu),
            drop(),
            LayerSpec::dense(1, Activation::Sigmoid),
        ],
    }
}

/// SqueezeNet 1.0 trunk with a GlobalAvgPool -> Dense(1, sigmoid) head in
/// place of the 1000-way conv10 classifier.
fn squeezenet_mask() -> NetworkConfig {
    let pool = || LayerSpec::MaxPool { pool: 3, stride: 2 };
    NetworkConfig {
        name: "squeezenet-mask".into(),
        input: [32, 32, 3],
        layers: vec![
            LayerSpec::conv(96, 7, 2, Padding::Same, Activation::Relu),
            pool(),
            LayerSpec::fire(16, 64, 64),
            LayerSpec::fire(16, 64, 64),
            LayerSpec::fire(32, 128, 128),
            pool(),
            LayerSpec::fire(32, 128, 128),
            LayerSpec::fire(48, 192, 192),
            LayerSpec::fire(48, 192, 192),
            LayerSpec::fire(64, 256, 256),
            pool(),
            LayerSpec::fire(64, 256, 256),
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::GlobalAvgPool,
            LayerSpec::dense(1, Activation::Sigmoid),
        ],
    }
}

fn squeezenet_mask_small() -> NetworkConfig {
    let mut cfg = squeezenet_mask();
    cfg.name = "squeezenet-mask-small".into();
    for _ in 0..2 {
        let last_fire = cfg
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Fire { .. }))
            .expect("squeezenet has fire modules");
        cfg.layers.remove(last_fire);
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::param_count;

    #[test]
    fn tinymask_param_count_near_reference() {
        let n = param_count(&zoo("tinymask-ref").unwrap()).unwrap();
        assert_eq!(n, 128_237);
        let rel = (n as f64 - 128_193.0).abs() / 128_193.0;
        assert!(rel <= 0.05, "{n} params");
    }

    #[test]
    fn small_squeezenet_drops_two_fires() {
        let full = zoo("squeezenet-mask").unwrap();
        let small = zoo("squeezenet-mask-small").unwrap();
        assert_eq!(full.fire_count(), 8);
        assert_eq!(full.fire_count() - small.fire_count(), 2);
        assert_eq!(full.layers.len() - small.layers.len(), 2);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(zoo("resnet"), Err(Error::NotFound(_))));
    }

    #[test]
    fn tinymask_has_dropout_after_every_hidden_parameterized_layer() {
        let cfg = zoo("tinymask-ref").unwrap();
        let last = cfg.layers.len() - 1;
        for (i, layer) in cfg.layers.iter().enumerate() {
            if layer.is_parameterized() && i != last {
                assert!(matches!(cfg.layers[i + 1], LayerSpec::Dropout { .. }), "layer {i}");
            }
        }
    }

    #[test]
    fn zoo_configs_roundtrip_through_toml() {
        for name in ZOO_NAMES {
            let cfg = zoo(name).unwrap();
            assert_eq!(NetworkConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }
}
