//! Run configuration, read from TOML.
//!
//! Every section and key is optional; missing values take the defaults
//! below. Relative paths are resolved against the directory holding the
//! config file.
//!
//! ```toml
//! [run]
//! seed = 0
//! out_dir = "run"
//! threads = 1
//!
//! [data]
//! scenes = 20
//! train_fraction = 0.8
//! num_classes = 5
//! image_size = 64
//! min_objects = 4
//! max_objects = 8
//!
//! [caption]
//! experts = 3
//! tau = 0.55
//! max_attempts = 3
//! corruption = "none"      # none | drop_numbers | drop_relations | noise
//!
//! [model]
//! use_ldpe = true
//! use_lqga = true
//! use_dmte = true
//! backbone_widths = [16, 32, 48, 64]
//! detail_widths = [16, 32, 64]
//! channels = 64
//! window = 3
//! dilation = 2
//! skip_widths = [32, 32, 64]
//! decoder_widths = [64, 32, 32]
//! text_length = 16
//! text_width = 32
//! text_buckets = 2048
//! embed_width = 64
//! guidance_blocks = 2
//!
//! [train]
//! steps = 400
//! batch_size = 8
//! lr = 0.001
//! milestones = [0.6, 0.85]
//! gamma = 0.1
//! weight_decay = 0.01
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//!
//! [eval]
//! split = "eval"           # eval | train
//!
//! [ablation]
//! seeds = [0, 1, 2, 3, 4]
//! steps = 400
//!
//! [timing]
//! size = 512
//! warmup = 2
//! runs = 10
//! ```

use std::path::{Path, PathBuf};

use mpers_core::caption::{CheckConfig, Corruption};
use mpers_core::model::{Components, ModelConfig};
use mpers_core::optim::{AdamWConfig, MultiStepSchedule};
use mpers_core::scene::SceneParams;
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for per-sample gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub scenes: usize,
    pub train_fraction: f64,
    pub num_classes: usize,
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let p = SceneParams::default();
        Self {
            scenes: 20,
            train_fraction: 0.8,
            num_classes: p.num_classes,
            image_size: p.size,
            min_objects: p.min_objects,
            max_objects: p.max_objects,
        }
    }
}

impl DataSection {
    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            num_classes: self.num_classes,
            size: self.image_size,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionSection {
    pub experts: usize,
    pub tau: f64,
    pub max_attempts: u32,
    pub corruption: String,
}

impl Default for CaptionSection {
    fn default() -> Self {
        let c = CheckConfig::default();
        Self {
            experts: 3,
            tau: c.tau,
            max_attempts: c.max_attempts,
            corruption: Corruption::None.as_str().into(),
        }
    }
}

impl CaptionSection {
    pub fn check(&self) -> CheckConfig {
        CheckConfig {
            tau: self.tau,
            max_attempts: self.max_attempts,
        }
    }

    pub fn corruption(&self) -> Result<Corruption> {
        Corruption::parse(&self.corruption).ok_or_else(|| {
            Error::Config(format!(
                "caption.corruption {:?} is not one of none, drop_numbers, drop_relations, noise",
                self.corruption
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub use_ldpe: bool,
    pub use_lqga: bool,
    pub use_dmte: bool,
    pub backbone_widths: [usize; 4],
    pub detail_widths: [usize; 3],
    pub channels: usize,
    pub window: usize,
    pub dilation: usize,
    pub skip_widths: [usize; 3],
    pub decoder_widths: [usize; 3],
    pub text_length: usize,
    pub text_width: usize,
    pub text_buckets: usize,
    pub embed_width: usize,
    pub guidance_blocks: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            use_ldpe: m.components.detail_encoder,
            use_lqga: m.components.text_guidance,
            use_dmte: m.components.expert_mixture,
            backbone_widths: m.backbone_widths,
            detail_widths: m.detail_widths,
            channels: m.channels,
            window: m.window,
            dilation: m.dilation,
            skip_widths: m.skip_widths,
            decoder_widths: m.decoder_widths,
            text_length: m.text_length,
            text_width: m.text_width,
            text_buckets: m.text_buckets,
            embed_width: m.embed_width,
            guidance_blocks: m.guidance_blocks,
        }
    }
}

impl ModelSection {
    pub fn components(&self) -> Components {
        Components {
            detail_encoder: self.use_ldpe,
            text_guidance: self.use_lqga,
            expert_mixture: self.use_dmte,
        }
    }

    pub fn set_components(&mut self, c: Components) {
        self.use_ldpe = c.detail_encoder;
        self.use_lqga = c.text_guidance;
        self.use_dmte = c.expert_mixture;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f32,
    /// Fractions of `steps` at which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<f64>,
    pub gamma: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            steps: 400,
            batch_size: 8,
            lr: 1e-3,
            milestones: vec![0.6, 0.85],
            gamma: 0.1,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl TrainSection {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self, steps: u64) -> MultiStepSchedule {
        MultiStepSchedule::from_fractions(self.lr, &self.milestones, self.gamma, steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: Split,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { split: Split::Eval }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
    pub steps: u64,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            steps: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub size: usize,
    pub warmup: usize,
    pub runs: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self {
            size: 512,
            warmup: 2,
            runs: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub caption: CaptionSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub timing: TimingSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates `path`; a relative `out_dir` becomes relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut config = Self::parse(&text).at(path)?;
        if config.run.out_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            config.run.out_dir = base.join(&config.run.out_dir);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model_config_for(self.model.components(), self.run.seed)
    }

    pub fn model_config_for(&self, components: Components, seed: u64) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            num_classes: self.data.num_classes,
            image_size: self.data.image_size,
            backbone_widths: m.backbone_widths,
            detail_widths: m.detail_widths,
            channels: m.channels,
            window: m.window,
            dilation: m.dilation,
            skip_widths: m.skip_widths,
            decoder_widths: m.decoder_widths,
            text_length: m.text_length,
            text_width: m.text_width,
            text_buckets: m.text_buckets,
            experts: self.caption.experts,
            embed_width: m.embed_width,
            guidance_blocks: m.guidance_blocks,
            components,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.model.use_dmte && !self.model.use_lqga {
            return fail("model.use_dmte requires model.use_lqga".into());
        }
        if self.run.threads == 0 {
            return fail("run.threads must be at least 1".into());
        }
        let d = &self.data;
        if d.scenes == 0 {
            return fail("data.scenes must be at least 1".into());
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return fail(format!(
                "data.train_fraction {} must lie strictly between 0 and 1",
                d.train_fraction
            ));
        }
        if d.min_objects > d.max_objects {
            return fail(format!(
                "data.min_objects {} exceeds data.max_objects {}",
                d.min_objects, d.max_objects
            ));
        }
        self.caption.corruption()?;
        self.caption.check().validate().map_err(|e| Error::Config(format!("caption: {e}")))?;
        if self.caption.experts == 0 {
            return fail("caption.experts must be at least 1".into());
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return fail("train.batch_size must be at least 1".into());
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return fail(format!("train.lr {} must be positive", t.lr));
        }
        if t.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return fail("train.milestones must be fractions in [0, 1]".into());
        }
        if self.ablation.seeds.is_empty() {
            return fail("ablation.seeds must not be empty".into());
        }
        if self.timing.runs == 0 {
            return fail("timing.runs must be at least 1".into());
        }
        if self.timing.size == 0 || !self.timing.size.is_multiple_of(16) {
            return fail(format!("timing.size {} is not a positive multiple of 16", self.timing.size));
        }
        self.model_config()
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.run.seed = 9;
        c.model.use_ldpe = false;
        c.train.milestones = vec![0.5];
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn mixture_without_guidance_is_rejected_by_name() {
        let err = RunConfig::parse("[model]\nuse_lqga = false\nuse_dmte = true\n").unwrap_err();
        assert!(err.to_string().contains("use_dmte requires model.use_lqga"), "{err}");
    }

    #[test]
    fn other_invalid_values() {
        for text in [
            "[timing]\nruns = 0",
            "[caption]\ncorruption = \"bogus\"",
            "[caption]\ntau = 1.5",
            "[train]\nbatch_size = 0",
            "[data]\nimage_size = 40",
            "[model]\nwindow = 2",
            "[run]\nbogus = 1",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }
}
