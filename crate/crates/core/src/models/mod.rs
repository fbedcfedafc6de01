//! Model configuration and the two segmentation networks.

pub mod attention;
pub mod fpn;
pub mod unet;

use std::fmt;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attention::AttentionGate;
pub use fpn::Fpn;
pub use unet::AttentionUNet;

use crate::error::{Error, Result};
use crate::nn::{weights, Module, Param};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Fpn,
    UnetAttn,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Fpn => "fpn",
            Arch::UnetAttn => "unet_attn",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fpn" => Ok(Arch::Fpn),
            "unet_attn" => Ok(Arch::UnetAttn),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// `(height, width)` of the network input.
    pub input_size: [usize; 2],
    /// U-Net first-stage width `C`; stages use C, 2C, 4C, 8C and a 16C bottleneck.
    pub base_width: usize,
    pub pyramid_channels: usize,
    pub head_channels: usize,
    pub num_classes: usize,
    pub pretrained_encoder: bool,
    /// Weight file supplying `encoder.*` tensors when `pretrained_encoder` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_weights: Option<PathBuf>,
    /// FPN encoder stage widths (strides 2, 4, 8, 16, 32).
    pub encoder_widths: [usize; 5],
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn default_for(arch: Arch) -> Self {
        match arch {
            Arch::Fpn => ModelConfig {
                arch,
                input_size: [224, 224],
                base_width: 44,
                pyramid_channels: 256,
                head_channels: 128,
                num_classes: 3,
                pretrained_encoder: false,
                encoder_weights: None,
                encoder_widths: [16, 24, 40, 80, 160],
                init_seed: 0,
            },
            Arch::UnetAttn => ModelConfig {
                arch,
                input_size: [256, 320],
                base_width: 44,
                pyramid_channels: 256,
                head_channels: 128,
                num_classes: 1,
                pretrained_encoder: false,
                encoder_weights: None,
                encoder_widths: [16, 24, 40, 80, 160],
                init_seed: 0,
            },
        }
    }

    pub fn required_divisor(&self) -> usize {
        match self.arch {
            Arch::Fpn => 32,
            Arch::UnetAttn => 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        let d = self.required_divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::Config(format!(
                "{} input {h}x{w} must be a positive multiple of {d}",
                self.arch
            )));
        }
        let classes = match self.arch {
            Arch::Fpn => 3,
            Arch::UnetAttn => 1,
        };
        if self.num_classes != classes {
            return Err(Error::Config(format!(
                "{} requires num_classes = {classes}, got {}",
                self.arch, self.num_classes
            )));
        }
        match self.arch {
            Arch::UnetAttn if self.base_width == 0 => {
                Err(Error::Config("base_width must be positive".into()))
            }
            Arch::Fpn
                if self.pyramid_channels == 0
                    || self.head_channels == 0
                    || self.encoder_widths.contains(&0) =>
            {
                Err(Error::Config("FPN widths must be positive".into()))
            }
            Arch::Fpn if self.pretrained_encoder && self.encoder_weights.is_none() => {
                Err(Error::Config(
                    "pretrained_encoder requires encoder_weights pointing at a weights file".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// A constructed network together with its configuration.
#[derive(Clone, Debug)]
pub enum ModelGraph {
    UnetAttn {
        config: ModelConfig,
        net: AttentionUNet,
    },
    Fpn {
        config: ModelConfig,
        net: Fpn,
    },
}

/// Activations recorded by [`ModelGraph::forward_train`].
#[derive(Debug)]
pub enum ForwardCache {
    UnetAttn(unet::UNetCache),
    Fpn(fpn::FpnCache),
}

pub fn build_unet_attention(config: &ModelConfig) -> Result<ModelGraph> {
    if config.arch != Arch::UnetAttn {
        return Err(Error::Config(format!("expected unet_attn, got {}", config.arch)));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    Ok(ModelGraph::UnetAttn {
        config: config.clone(),
        net: AttentionUNet::new(config, &mut rng),
    })
}

pub fn build_fpn(config: &ModelConfig) -> Result<ModelGraph> {
    if config.arch != Arch::Fpn {
        return Err(Error::Config(format!("expected fpn, got {}", config.arch)));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut net = Fpn::new(config, &mut rng);
    if config.pretrained_encoder {
        let path = config.encoder_weights.as_ref().expect("validated");
        weights::load_into(&mut net, &weights::read(path)?, Some("encoder."))?;
    }
    Ok(ModelGraph::Fpn {
        config: config.clone(),
        net,
    })
}

pub fn build(config: &ModelConfig) -> Result<ModelGraph> {
    match config.arch {
        Arch::Fpn => build_fpn(config),
        Arch::UnetAttn => build_unet_attention(config),
    }
}

/// Build without reading any encoder weight file; used before restoring a
/// full set of stored weights.
pub(crate) fn build_skeleton(config: &ModelConfig) -> Result<ModelGraph> {
    let mut bare = config.clone();
    bare.pretrained_encoder = false;
    bare.encoder_weights = None;
    let mut model = build(&bare)?;
    *model.config_mut() = config.clone();
    Ok(model)
}

/// Total trainable scalars.
pub fn count_parameters(model: &ModelGraph) -> usize {
    model.num_parameters()
}

/// One row of the architecture summary.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSummary {
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub parameters: usize,
}

impl ModelGraph {
    pub fn config(&self) -> &ModelConfig {
        match self {
            ModelGraph::UnetAttn { config, .. } | ModelGraph::Fpn { config, .. } => config,
        }
    }

    pub fn arch(&self) -> Arch {
        self.config().arch
    }

    pub(crate) fn config_mut(&mut self) -> &mut ModelConfig {
        match self {
            ModelGraph::UnetAttn { config, .. } | ModelGraph::Fpn { config, .. } => config,
        }
    }

    pub fn output_channels(&self) -> usize {
        self.config().num_classes
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let d = self.config().required_divisor();
        if c != 3 || h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!(
                "{} expects (B, 3, H, W) with H, W multiples of {d}, got {:?}",
                self.arch(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Per-pixel probabilities: `(B, 3, H, W)` softmax for FPN, `(B, 1, H, W)`
    /// sigmoid for the U-Net.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match self {
            ModelGraph::UnetAttn { net, .. } => net.forward(x),
            ModelGraph::Fpn { net, .. } => net.forward(x),
        }
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        match self {
            ModelGraph::UnetAttn { net, .. } => {
                net.forward_cached(x).map(|(y, c)| (y, ForwardCache::UnetAttn(c)))
            }
            ModelGraph::Fpn { net, .. } => {
                net.forward_cached(x).map(|(y, c)| (y, ForwardCache::Fpn(c)))
            }
        }
    }

    /// Accumulate parameter gradients given `d loss / d output`.
    pub fn backward(&mut self, cache: &ForwardCache, grad: &Tensor) -> Result<()> {
        match (self, cache) {
            (ModelGraph::UnetAttn { net, .. }, ForwardCache::UnetAttn(c)) => net.backward(c, grad),
            (ModelGraph::Fpn { net, .. }, ForwardCache::Fpn(c)) => net.backward(c, grad),
            _ => Err(Error::Argument("cache does not belong to this model".into())),
        }
    }

    pub fn summary(&self) -> Vec<LayerSummary> {
        let mut rows: Vec<LayerSummary> = Vec::new();
        self.visit(&mut |p| {
            let layer = p
                .name
                .rsplit_once('.')
                .map(|(l, _)| l)
                .unwrap_or(&p.name)
                .to_string();
            match rows.last_mut() {
                Some(r) if r.name == layer => r.parameters += p.len(),
                _ => rows.push(LayerSummary {
                    name: layer,
                    weight_shape: p.shape.clone(),
                    parameters: p.len(),
                }),
            }
        });
        rows
    }

    /// Tab-separated `name  shape  parameters` table with a total line.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let mut total = 0;
        for r in self.summary() {
            let shape = r
                .weight_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            out.push_str(&format!("{}\t{}\t{}\n", r.name, shape, r.parameters));
            total += r.parameters;
        }
        out.push_str(&format!("total\t-\t{total}\n"));
        out
    }
}

impl Module for ModelGraph {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            ModelGraph::UnetAttn { net, .. } => net.visit(f),
            ModelGraph::Fpn { net, .. } => net.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            ModelGraph::UnetAttn { net, .. } => net.visit_mut(f),
            ModelGraph::Fpn { net, .. } => net.visit_mut(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indivisible_inputs_are_config_errors() {
        let mut cfg = ModelConfig::default_for(Arch::UnetAttn);
        cfg.input_size = [250, 320];
        assert!(matches!(build_unet_attention(&cfg), Err(Error::Config(_))));
        let mut cfg = ModelConfig::default_for(Arch::Fpn);
        cfg.input_size = [224, 208];
        assert!(matches!(build_fpn(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn pretrained_without_weights_is_rejected() {
        let mut cfg = ModelConfig::default_for(Arch::Fpn);
        cfg.pretrained_encoder = true;
        assert!(matches!(build_fpn(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = ModelConfig::default_for(Arch::Fpn);
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"arch\":\"fpn\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), cfg);
    }

    #[test]
    fn summary_total_matches_count() {
        let mut cfg = ModelConfig::default_for(Arch::UnetAttn);
        cfg.base_width = 4;
        cfg.input_size = [32, 32];
        let m = build(&cfg).unwrap();
        let total: usize = m.summary().iter().map(|r| r.parameters).sum();
        assert_eq!(total, count_parameters(&m));
        assert!(m.summary_text().ends_with(&format!("total\t-\t{total}\n")));
    }
}
