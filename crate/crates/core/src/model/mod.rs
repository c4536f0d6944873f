//! The four trainable components of the split network and the monolithic
//! reference model that mirrors them.
//!
//! * image bottom (host): stem conv → ReLU → max-pool → residual blocks →
//!   global average pool → dense to `embed_dim`
//! * tabular bottom (guest): dense `tabular_in → tabular_hidden` → ReLU →
//!   dense `→ embed_dim`
//! * interactive layer (guest): see [`InteractiveLayer`]
//! * top (guest): dense `interactive_dim → num_classes`

mod interactive;
mod parties;
mod reference;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{argmax_rows, LayerSpec, NnError, ParameterStore, Result, Sequential, Tensor};

pub use interactive::{Activation, InteractiveCache, InteractiveLayer, BIAS, W_GUEST, W_HOST};
pub use parties::{GuestModel, GuestStep, HostModel};
pub use reference::LocalReferenceModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitModelConfig {
    pub tabular_in: usize,
    pub tabular_hidden: usize,
    pub embed_dim: usize,
    /// `[channels, height, width]`.
    pub image_shape: [usize; 3],
    pub image_blocks: usize,
    /// Channel width of the stem convolution and every residual block.
    pub image_width: usize,
    pub interactive_dim: usize,
    pub interactive_activation: Activation,
    pub num_classes: usize,
}

impl Default for SplitModelConfig {
    fn default() -> Self {
        Self {
            tabular_in: 12,
            tabular_hidden: 20,
            embed_dim: 10,
            image_shape: [1, 32, 32],
            image_blocks: 2,
            image_width: 8,
            interactive_dim: 10,
            interactive_activation: Activation::Identity,
            num_classes: 3,
        }
    }
}

/// Validated layer layout for every component of a [`SplitModelConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitArchitecture {
    pub config: SplitModelConfig,
    pub image_bottom: Sequential,
    pub tabular_bottom: Sequential,
    pub interactive: InteractiveLayer,
    pub top: Sequential,
}

fn invalid(what: &str, err: NnError) -> NnError {
    NnError::InvalidConfig(format!("{what}: {err}"))
}

impl SplitArchitecture {
    pub fn new(cfg: &SplitModelConfig) -> Result<Self> {
        let positive = [
            ("tabular_in", cfg.tabular_in),
            ("tabular_hidden", cfg.tabular_hidden),
            ("embed_dim", cfg.embed_dim),
            ("image channels", cfg.image_shape[0]),
            ("image height", cfg.image_shape[1]),
            ("image width", cfg.image_shape[2]),
            ("image_width", cfg.image_width),
            ("interactive_dim", cfg.interactive_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(NnError::InvalidConfig(format!("{name} must be positive")));
        }
        if cfg.num_classes < 2 {
            return Err(NnError::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                cfg.num_classes
            )));
        }
        let w = cfg.image_width;
        let mut layers = vec![
            LayerSpec::Conv2d {
                in_channels: cfg.image_shape[0],
                out_channels: w,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
        ];
        for i in 0..cfg.image_blocks {
            layers.push(LayerSpec::ResidualBlock {
                channels: w,
                downsample: i > 0,
            });
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense {
            in_dim: w,
            out_dim: cfg.embed_dim,
        });
        let image_bottom =
            Sequential::new(&cfg.image_shape, layers).map_err(|e| invalid("image bottom", e))?;
        let tabular_bottom = Sequential::new(
            &[cfg.tabular_in],
            vec![
                LayerSpec::Dense {
                    in_dim: cfg.tabular_in,
                    out_dim: cfg.tabular_hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_dim: cfg.tabular_hidden,
                    out_dim: cfg.embed_dim,
                },
            ],
        )
        .map_err(|e| invalid("tabular bottom", e))?;
        let top = Sequential::new(
            &[cfg.interactive_dim],
            vec![LayerSpec::Dense {
                in_dim: cfg.interactive_dim,
                out_dim: cfg.num_classes,
            }],
        )
        .map_err(|e| invalid("top model", e))?;
        Ok(Self {
            config: cfg.clone(),
            image_bottom,
            tabular_bottom,
            interactive: InteractiveLayer {
                embed_dim: cfg.embed_dim,
                out_dim: cfg.interactive_dim,
                activation: cfg.interactive_activation,
            },
            top,
        })
    }
}

/// Parameters of all four split components.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub arch: SplitArchitecture,
    pub image_bottom: ParameterStore,
    pub tabular_bottom: ParameterStore,
    pub interactive: ParameterStore,
    pub top: ParameterStore,
}

impl SplitModel {
    /// Each component draws from its own stream derived from `seed`.
    pub fn build(cfg: &SplitModelConfig, seed: u64) -> Result<Self> {
        let arch = SplitArchitecture::new(cfg)?;
        let image_bottom = arch.image_bottom.init_params(seed);
        let tabular_bottom = arch.tabular_bottom.init_params(seed.wrapping_add(1));
        let interactive = arch
            .interactive
            .init_params(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)));
        let top = arch.top.init_params(seed.wrapping_add(3));
        Ok(Self {
            arch,
            image_bottom,
            tabular_bottom,
            interactive,
            top,
        })
    }

    /// Every parameter in the documented flattening order: image bottom,
    /// tabular bottom, interactive (`w_host`, `w_guest`, `bias`), top.
    pub fn flat_values(&self) -> Vec<f32> {
        let mut v = self.image_bottom.flat_values();
        v.extend(self.tabular_bottom.flat_values());
        v.extend(self.interactive.flat_values());
        v.extend(self.top.flat_values());
        v
    }

    pub fn logits(&self, images: &Tensor, tabular: &Tensor) -> Result<Tensor> {
        let eh = self.arch.image_bottom.infer(&self.image_bottom, images)?;
        let eg = self.arch.tabular_bottom.infer(&self.tabular_bottom, tabular)?;
        let (z, _) = self.arch.interactive.forward(&self.interactive, &eh, &eg)?;
        self.arch.top.infer(&self.top, &z)
    }

    /// Argmax class per row, lowest index on ties.
    pub fn predict(&self, images: &Tensor, tabular: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(images, tabular)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_counts() {
        let m = SplitModel::build(&SplitModelConfig::default(), 0).unwrap();
        assert_eq!(m.tabular_bottom.scalar_count(), 12 * 20 + 20 + 20 * 10 + 10);
        assert_eq!(m.tabular_bottom.scalar_count(), 470);
        assert_eq!(m.interactive.scalar_count(), 210);
        assert_eq!(m.top.scalar_count(), 10 * 3 + 3);
        assert_eq!(m.arch.image_bottom.output_shape(), &[10]);
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = SplitModelConfig::default();
        assert_eq!(SplitModel::build(&cfg, 5).unwrap(), SplitModel::build(&cfg, 5).unwrap());
        assert_ne!(
            SplitModel::build(&cfg, 5).unwrap().flat_values(),
            SplitModel::build(&cfg, 6).unwrap().flat_values()
        );
    }

    #[test]
    fn invalid_configs_are_described() {
        let mut cfg = SplitModelConfig::default();
        cfg.embed_dim = 0;
        let err = SplitModel::build(&cfg, 0).unwrap_err().to_string();
        assert!(err.contains("embed_dim"), "{err}");

        let mut cfg = SplitModelConfig::default();
        cfg.image_shape = [1, 1, 1];
        assert!(SplitModel::build(&cfg, 0).unwrap_err().to_string().contains("image bottom"));
    }
}
