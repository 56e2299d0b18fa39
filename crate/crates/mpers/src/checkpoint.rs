//! Checkpoint archive: every parameter and the optimizer moments as `MPT1`
//! tensors behind a JSON manifest.
//!
//! Layout: `MPCK`, u32 LE manifest length, manifest JSON, then the tensor
//! blobs. Each manifest entry gives a blob's name, byte offset (from the end
//! of the manifest) and length.

use std::path::Path;

use mpers_core::model::{Components, Model, ModelConfig};
use mpers_core::optim::{AdamWConfig, MultiStepSchedule, OptimizerState};
use mpers_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, Context, Result};
use crate::formats::{decode_tensor, encode_tensor, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_classes: usize,
    pub image_size: usize,
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
    pub experts: usize,
    pub embed_width: usize,
    pub guidance_blocks: usize,
    pub use_ldpe: bool,
    pub use_lqga: bool,
    pub use_dmte: bool,
    pub seed: u64,
}

impl From<&ModelConfig> for ModelSpec {
    fn from(c: &ModelConfig) -> Self {
        Self {
            num_classes: c.num_classes,
            image_size: c.image_size,
            backbone_widths: c.backbone_widths,
            detail_widths: c.detail_widths,
            channels: c.channels,
            window: c.window,
            dilation: c.dilation,
            skip_widths: c.skip_widths,
            decoder_widths: c.decoder_widths,
            text_length: c.text_length,
            text_width: c.text_width,
            text_buckets: c.text_buckets,
            experts: c.experts,
            embed_width: c.embed_width,
            guidance_blocks: c.guidance_blocks,
            use_ldpe: c.components.detail_encoder,
            use_lqga: c.components.text_guidance,
            use_dmte: c.components.expert_mixture,
            seed: c.seed,
        }
    }
}

impl From<&ModelSpec> for ModelConfig {
    fn from(s: &ModelSpec) -> Self {
        Self {
            num_classes: s.num_classes,
            image_size: s.image_size,
            backbone_widths: s.backbone_widths,
            detail_widths: s.detail_widths,
            channels: s.channels,
            window: s.window,
            dilation: s.dilation,
            skip_widths: s.skip_widths,
            decoder_widths: s.decoder_widths,
            text_length: s.text_length,
            text_width: s.text_width,
            text_buckets: s.text_buckets,
            experts: s.experts,
            embed_width: s.embed_width,
            guidance_blocks: s.guidance_blocks,
            components: Components {
                detail_encoder: s.use_ldpe,
                text_guidance: s.use_lqga,
                expert_mixture: s.use_dmte,
            },
            seed: s.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub step: u64,
    pub base_lr: f32,
    pub milestones: Vec<u64>,
    pub gamma: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: u64,
    pub length: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    pub tensors: Vec<TensorEntry>,
}

pub const PARAM_PREFIX: &str = "param/";
pub const FIRST_MOMENT_PREFIX: &str = "adam.m/";
pub const SECOND_MOMENT_PREFIX: &str = "adam.v/";

pub fn encode_checkpoint(model: &Model, optimizer: &OptimizerState) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor, trainable: bool| -> Result<()> {
        let bytes = encode_tensor(t)?;
        tensors.push(TensorEntry {
            name,
            offset: blobs.len() as u64,
            length: bytes.len() as u64,
            trainable,
        });
        blobs.extend_from_slice(&bytes);
        Ok(())
    };
    for (id, p) in model.params.iter() {
        push(format!("{PARAM_PREFIX}{}", p.name), &p.value, p.requires_grad())?;
        if let Some(m) = &optimizer.first[id.index()] {
            push(format!("{FIRST_MOMENT_PREFIX}{}", p.name), m, true)?;
        }
        if let Some(v) = &optimizer.second[id.index()] {
            push(format!("{SECOND_MOMENT_PREFIX}{}", p.name), v, true)?;
        }
    }
    let (s, c) = (&optimizer.schedule, &optimizer.config);
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        model: ModelSpec::from(&model.config),
        optimizer: OptimizerSpec {
            step: optimizer.step,
            base_lr: s.base_lr,
            milestones: s.milestones.clone(),
            gamma: s.gamma,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        },
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + json.len() + blobs.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    Ok(out)
}

/// Rebuilds the model and optimizer state stored in `bytes`.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, OptimizerState)> {
    let bad = |d: String| format_err("checkpoint", d);
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing MPCK header".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = 8usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("manifest runs past the end of the file".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[8..body])?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {}", manifest.version)));
    }
    let blobs = &bytes[body..];
    let mut model = Model::new(ModelConfig::from(&manifest.model))?;
    let o = &manifest.optimizer;
    let mut optimizer = OptimizerState::new(
        &model.params,
        AdamWConfig {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
        },
        MultiStepSchedule {
            base_lr: o.base_lr,
            milestones: o.milestones.clone(),
            gamma: o.gamma,
        },
    );
    optimizer.step = o.step;
    let mut seen = vec![[false; 3]; model.params.len()];
    let mut end = 0u64;
    for entry in &manifest.tensors {
        let (kind, name) = [PARAM_PREFIX, FIRST_MOMENT_PREFIX, SECOND_MOMENT_PREFIX]
            .iter()
            .enumerate()
            .find_map(|(k, p)| entry.name.strip_prefix(p).map(|n| (k, n)))
            .ok_or_else(|| bad(format!("unknown tensor {:?}", entry.name)))?;
        let id = model
            .params
            .find(name)
            .ok_or_else(|| bad(format!("tensor {:?} matches no parameter", entry.name)))?;
        let start = entry.offset as usize;
        let stop = start
            .checked_add(entry.length as usize)
            .filter(|&s| s <= blobs.len())
            .ok_or_else(|| bad(format!("tensor {:?} runs past the end of the file", entry.name)))?;
        end = end.max(stop as u64);
        let tensor = decode_tensor(&blobs[start..stop])?;
        let param = model.params.get(id);
        if tensor.shape() != param.value.shape() || entry.trainable != param.requires_grad() {
            return Err(bad(format!(
                "tensor {:?} has shape {:?} (trainable {}), expected {:?} (trainable {})",
                entry.name,
                tensor.shape(),
                entry.trainable,
                param.value.shape(),
                param.requires_grad()
            )));
        }
        let slot = match kind {
            0 => Some(&mut model.params.get_mut(id).value),
            1 => optimizer.first[id.index()].as_mut(),
            _ => optimizer.second[id.index()].as_mut(),
        }
        .ok_or_else(|| bad(format!("moment {:?} for a frozen parameter", entry.name)))?;
        *slot = tensor;
        seen[id.index()][kind] = true;
    }
    if end != blobs.len() as u64 {
        return Err(bad("trailing bytes after the last tensor".into()));
    }
    for (id, p) in model.params.iter() {
        let need = if p.requires_grad() { [true; 3] } else { [true, false, false] };
        if seen[id.index()] != need {
            return Err(bad(format!("parameter {:?} is incomplete", p.name)));
        }
    }
    Ok((model, optimizer))
}

pub fn save_checkpoint(path: &Path, model: &Model, optimizer: &OptimizerState) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, optimizer)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, OptimizerState)> {
    decode_checkpoint(&std::fs::read(path).at(path)?).at(path)
}
