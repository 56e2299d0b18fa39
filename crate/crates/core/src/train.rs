//! Loss, per-sample gradients and the optimizer step.
//!
//! A batch gradient is the mean of per-sample gradients added in batch
//! order, so the result does not depend on how the samples were scheduled.

use alloc::vec::Vec;

use crate::autograd::Graph;
use crate::decoder::segment;
use crate::error::{Error, Result};
use crate::model::{Model, ModelInput};
use crate::optim::OptimizerState;
use crate::param::ParamId;
use crate::scene::LabelMap;
use crate::tensor::Tensor;

/// One training or evaluation example with its encoded captions.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub image: &'a Tensor,
    pub labels: &'a LabelMap,
    pub captions: &'a [Tensor],
    pub backbone: Option<&'a [Tensor; 4]>,
}

impl<'a> Sample<'a> {
    fn input(&self) -> ModelInput<'a> {
        ModelInput {
            image: self.image,
            backbone: self.backbone,
            captions: self.captions,
        }
    }
}

/// Loss of one sample and its gradient for every trainable parameter.
#[derive(Clone, Debug)]
pub struct SampleGradient {
    pub loss: f32,
    pub grads: Vec<(ParamId, Tensor)>,
}

pub fn sample_gradient(model: &Model, sample: &Sample<'_>) -> Result<SampleGradient> {
    let mut g = Graph::with_params(&model.params);
    let out = model.forward(&mut g, &sample.input())?;
    let loss = g.cross_entropy(out.logits, &sample.labels.data, None)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?.into_param_grads(&model.params);
    Ok(SampleGradient { loss: value, grads })
}

/// Averages `parts` in order, takes one optimizer step and clears the
/// gradients. Returns the mean loss. A non-finite loss aborts the step
/// without touching the parameters.
pub fn apply_gradients(model: &mut Model, optimizer: &mut OptimizerState, parts: &[SampleGradient]) -> Result<f32> {
    let step = optimizer.step + 1;
    if parts.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut total = 0.0f32;
    for p in parts {
        total += p.loss;
    }
    let loss = total / parts.len() as f32;
    if !loss.is_finite() {
        return Err(Error::Training { step });
    }
    model.params.zero_grads();
    let scale = 1.0 / parts.len() as f32;
    for p in parts {
        model.params.accumulate(&p.grads, scale);
    }
    optimizer.step(&mut model.params);
    model.params.zero_grads();
    Ok(loss)
}

/// Sequential training step over `batch`.
pub fn train_step(model: &mut Model, optimizer: &mut OptimizerState, batch: &[Sample<'_>]) -> Result<f32> {
    let parts = batch
        .iter()
        .map(|s| sample_gradient(model, s))
        .collect::<Result<Vec<_>>>()?;
    apply_gradients(model, optimizer, &parts)
}

/// Forward-pass results for one sample.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub logits: Tensor,
    pub labels: LabelMap,
    /// Channel guidance weights of each fusion block.
    pub guidance: Vec<Tensor>,
    pub gates: Option<Tensor>,
}

pub fn predict(model: &Model, sample: &Sample<'_>) -> Result<Prediction> {
    let mut g = Graph::with_params(&model.params);
    let out = model.forward(&mut g, &sample.input())?;
    let logits = g.value(out.logits).clone();
    let labels = segment(&logits)?;
    Ok(Prediction {
        logits,
        labels,
        guidance: out.guidance.iter().map(|&w| g.value(w).clone()).collect(),
        gates: out.gates.map(|v| g.value(v).clone()),
    })
}
