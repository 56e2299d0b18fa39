//! The full segmentation network and its configuration.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::decoder::Decoder;
use crate::error::{dim, Error, Result};
use crate::lqga::LqgaStack;
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::{Dmte, HashEncoder, TextEncoder};
use crate::vision::{DetailEncoder, DilateFuse, Skips, StubBackbone};

/// Output stride of the finest decoder stage.
pub const HEAD_STRIDE: usize = 4;

/// Optional components. Text guidance needs no mixture (it then reads the
/// first expert's raw tokens), but the mixture needs text guidance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Components {
    pub detail_encoder: bool,
    pub text_guidance: bool,
    pub expert_mixture: bool,
}

impl Components {
    pub const BASELINE: Self = Self {
        detail_encoder: false,
        text_guidance: false,
        expert_mixture: false,
    };
    pub const FULL: Self = Self {
        detail_encoder: true,
        text_guidance: true,
        expert_mixture: true,
    };

    /// The cumulative ablation rows, each with a short label.
    pub fn ladder() -> [(&'static str, Self); 4] {
        [
            ("baseline", Self::BASELINE),
            (
                "+detail",
                Self {
                    detail_encoder: true,
                    ..Self::BASELINE
                },
            ),
            (
                "+guidance",
                Self {
                    detail_encoder: true,
                    text_guidance: true,
                    expert_mixture: false,
                },
            ),
            ("+experts", Self::FULL),
        ]
    }
}

impl Default for Components {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub image_size: usize,
    pub backbone_widths: [usize; 4],
    pub detail_widths: [usize; 3],
    /// Channels of the fused deep feature and of the guidance blocks.
    pub channels: usize,
    pub window: usize,
    pub dilation: usize,
    pub skip_widths: [usize; 3],
    /// Decoder stage widths, coarse to fine.
    pub decoder_widths: [usize; 3],
    pub text_length: usize,
    pub text_width: usize,
    pub text_buckets: usize,
    pub experts: usize,
    pub embed_width: usize,
    pub guidance_blocks: usize,
    pub components: Components,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            image_size: 64,
            backbone_widths: [16, 32, 48, 64],
            detail_widths: [16, 32, 64],
            channels: 64,
            window: 3,
            dilation: 2,
            skip_widths: [32, 32, 64],
            decoder_widths: [64, 32, 32],
            text_length: HashEncoder::DEFAULT_LENGTH,
            text_width: HashEncoder::DEFAULT_WIDTH,
            text_buckets: HashEncoder::DEFAULT_BUCKETS,
            experts: 3,
            embed_width: 64,
            guidance_blocks: 2,
            components: Components::FULL,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        if !(2..=256).contains(&self.num_classes) {
            return fail(format!("num_classes {} outside 2..=256", self.num_classes));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return fail(format!("image_size {} is not a positive multiple of 16", self.image_size));
        }
        if self.window == 0 || self.window.is_multiple_of(2) || self.dilation == 0 {
            return fail(format!(
                "window {} must be odd and dilation {} at least 1",
                self.window, self.dilation
            ));
        }
        if self.window > self.image_size / 16 {
            return fail(format!(
                "window {} exceeds the {}×{} deep feature map",
                self.window,
                self.image_size / 16,
                self.image_size / 16
            ));
        }
        let widths = self
            .backbone_widths
            .iter()
            .chain(&self.detail_widths)
            .chain(&self.skip_widths)
            .chain(&self.decoder_widths)
            .chain([
                &self.channels,
                &self.text_length,
                &self.text_width,
                &self.text_buckets,
                &self.embed_width,
            ]);
        if widths.into_iter().any(|&w| w == 0) {
            return fail("every width and length must be positive".into());
        }
        if self.experts == 0 {
            return fail("at least one caption expert is needed".into());
        }
        if !(1..=4).contains(&self.guidance_blocks) {
            return fail(format!("guidance_blocks {} outside 1..=4", self.guidance_blocks));
        }
        if self.components.expert_mixture && !self.components.text_guidance {
            return fail("the expert mixture requires text guidance".into());
        }
        Ok(())
    }

    pub fn with_components(&self, components: Components) -> Self {
        Self {
            components,
            ..self.clone()
        }
    }
}

/// Inputs of one forward pass. Precomputed backbone levels may be supplied
/// in place of running the frozen backbone; `captions` holds one token
/// matrix per expert.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a, T: Scalar = f32> {
    pub image: &'a Tensor<T>,
    pub backbone: Option<&'a [Tensor<T>; 4]>,
    pub captions: &'a [Tensor<T>],
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub logits: Var,
    /// Channel weights of every guidance block.
    pub guidance: Vec<Var>,
    pub gates: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub backbone: StubBackbone,
    pub text_encoder: HashEncoder,
    pub detail: Option<DetailEncoder>,
    pub fuse: DilateFuse,
    pub skips: Skips,
    pub guidance: Option<LqgaStack>,
    pub mixture: Option<Dmte>,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let seed = c.seed;
        let mut params = ParamStore::new();
        let backbone = StubBackbone::new(&mut params, seed, c.backbone_widths);
        let text_encoder = HashEncoder::new(&mut params, seed, c.text_length, c.text_width, c.text_buckets);
        let with_detail = c.components.detail_encoder;
        let detail = with_detail.then(|| DetailEncoder::new(&mut params, seed, c.detail_widths));
        let mut streams = alloc::vec![c.backbone_widths[3]];
        if with_detail {
            streams.push(c.detail_widths[2]);
        }
        let fuse = DilateFuse::new(&mut params, seed, &streams, c.channels, c.window, c.dilation);
        let mut skip_in = [c.backbone_widths[0], c.backbone_widths[1], c.backbone_widths[2]];
        if with_detail {
            for (s, d) in skip_in.iter_mut().zip(c.detail_widths) {
                *s += d;
            }
        }
        let skips = Skips::new(&mut params, seed, skip_in, c.skip_widths);
        let guidance = c.components.text_guidance.then(|| {
            LqgaStack::new(&mut params, seed, c.guidance_blocks, c.text_width, c.channels, c.embed_width)
        });
        let mixture = c
            .components
            .expert_mixture
            .then(|| Dmte::new(&mut params, seed, c.text_width, c.experts));
        let decoder = Decoder::new(
            &mut params,
            seed,
            c.channels,
            c.skip_widths,
            c.decoder_widths,
            c.num_classes,
            HEAD_STRIDE,
        );
        Ok(Self {
            config,
            params,
            backbone,
            text_encoder,
            detail,
            fuse,
            skips,
            guidance,
            mixture,
            decoder,
        })
    }

    /// Trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn uses_text(&self) -> bool {
        self.guidance.is_some()
    }

    pub fn encode_caption(&self, text: &str) -> Tensor {
        self.text_encoder.encode(&self.params, text)
    }

    pub fn backbone_features(&self, image: &Tensor) -> Result<[Tensor; 4]> {
        self.backbone.features(&self.params, image)
    }

    /// Builds the network on `g`, which must be bound to this model's
    /// parameters or a cast copy of them.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, input: &ModelInput<'_, T>) -> Result<ModelOutput> {
        let n = self.config.image_size;
        if input.image.shape() != [3, n, n] {
            return Err(dim(
                "model",
                format!("image {:?} is not 3×{n}×{n}", input.image.shape()),
            ));
        }
        let image = g.input(input.image.clone());
        let taps = match input.backbone {
            Some(levels) => levels.clone().map(|t| g.input(t)),
            None => self.backbone.encode(g, image)?,
        };
        let detail = match &self.detail {
            Some(d) => d.encode(g, image)?.to_vec(),
            None => Vec::new(),
        };
        let mut deep_streams = alloc::vec![taps[3]];
        deep_streams.extend(detail.last());
        let fused = self.fuse.forward(g, &deep_streams)?;
        let skips = self.skips.forward(g, &taps[..3], &detail)?;
        let mut guidance = Vec::new();
        let mut gates = None;
        let deep = match &self.guidance {
            None => fused,
            Some(stack) => {
                let needed = if self.mixture.is_some() { self.config.experts } else { 1 };
                if input.captions.len() < needed {
                    return Err(dim(
                        "model",
                        format!("{} caption token sets, {needed} needed", input.captions.len()),
                    ));
                }
                let text = match &self.mixture {
                    Some(mix) => {
                        let toks: Vec<Var> = input.captions[..needed].iter().map(|t| g.input(t.clone())).collect();
                        let out = mix.forward(g, &toks)?;
                        gates = Some(out.gates);
                        out.tokens
                    }
                    None => g.input(input.captions[0].clone()),
                };
                let out = stack.forward(g, fused, text)?;
                guidance = out.weights;
                out.features
            }
        };
        let logits = self.decoder.decode(g, deep, skips)?;
        Ok(ModelOutput {
            logits,
            guidance,
            gates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_parameter_counts_increase() {
        let base = ModelConfig::default();
        let counts: Vec<usize> = Components::ladder()
            .iter()
            .map(|(_, c)| Model::new(base.with_components(*c)).unwrap().parameter_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }

    #[test]
    fn invalid_configs() {
        let ok = ModelConfig::default();
        ok.validate().unwrap();
        let bad = [
            ModelConfig {
                image_size: 40,
                ..ok.clone()
            },
            ModelConfig {
                window: 2,
                ..ok.clone()
            },
            ModelConfig {
                image_size: 32,
                ..ok.clone()
            },
            ModelConfig {
                components: Components {
                    expert_mixture: true,
                    text_guidance: false,
                    detail_encoder: true,
                },
                ..ok.clone()
            },
            ModelConfig {
                num_classes: 1,
                ..ok.clone()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn forward_shapes_for_every_row() {
        let base = ModelConfig::default();
        let image = Tensor::full(&[3, 64, 64], 0.5);
        for (_, comp) in Components::ladder() {
            let model = Model::new(base.with_components(comp)).unwrap();
            let caps: Vec<Tensor> = (0..3).map(|i| model.encode_caption(["a road", "two trees", ""][i])).collect();
            let mut g = Graph::with_params(&model.params);
            let out = model
                .forward(
                    &mut g,
                    &ModelInput {
                        image: &image,
                        backbone: None,
                        captions: &caps,
                    },
                )
                .unwrap();
            assert_eq!(g.shape(out.logits), &[5, 64, 64]);
            assert_eq!(g.value(out.logits).max_abs(), 0.0);
            assert_eq!(out.guidance.len(), if comp.text_guidance { 2 } else { 0 });
            assert_eq!(out.gates.is_some(), comp.expert_mixture);
        }
    }

    #[test]
    fn cached_backbone_matches_inline() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let image = Tensor::from_fn(&[3, 64, 64], |i| ((i * 37) % 101) as f32 / 101.0);
        let caps: Vec<Tensor> = (0..3).map(|_| model.encode_caption("one road left of two trees")).collect();
        let taps = model.backbone_features(&image).unwrap();
        let run = |backbone| {
            let mut g = Graph::with_params(&model.params);
            let out = model
                .forward(
                    &mut g,
                    &ModelInput {
                        image: &image,
                        backbone,
                        captions: &caps,
                    },
                )
                .unwrap();
            g.value(out.guidance[1]).clone()
        };
        assert_eq!(run(None), run(Some(&taps)));
    }
}
