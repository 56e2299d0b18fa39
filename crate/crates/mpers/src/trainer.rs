//! Training and evaluation over a loaded dataset.

use std::collections::BTreeMap;
use std::path::Path;

use mpers_core::metrics::ConfusionMatrix;
use mpers_core::model::Model;
use mpers_core::optim::OptimizerState;
use mpers_core::rng::indexed_substream;
use mpers_core::train::{apply_gradients, predict, sample_gradient, Prediction, Sample, SampleGradient};
use mpers_core::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SceneRecord;
use crate::error::{format_err, Error, Result};
use crate::formats::write_atomic;

/// A scene with its cached frozen-backbone features and encoded captions.
#[derive(Clone, Debug)]
pub struct Prepared<'a> {
    pub scene: &'a SceneRecord,
    pub backbone: [Tensor; 4],
    pub captions: Vec<Tensor>,
}

impl Prepared<'_> {
    pub fn sample(&self) -> Sample<'_> {
        Sample {
            image: &self.scene.image,
            labels: &self.scene.labels,
            captions: &self.captions,
            backbone: Some(&self.backbone),
        }
    }
}

/// Caches backbone features and encodes each scene's captions. `captions`
/// maps scene seeds to expert captions and is only consulted when the model
/// reads text.
pub fn prepare<'a>(
    model: &Model,
    scenes: &[&'a SceneRecord],
    captions: Option<&BTreeMap<u64, Vec<String>>>,
) -> Result<Vec<Prepared<'a>>> {
    scenes
        .iter()
        .map(|&scene| {
            let backbone = model.backbone_features(&scene.image)?;
            let captions = if model.uses_text() {
                let texts = captions
                    .and_then(|c| c.get(&scene.entry.seed))
                    .ok_or_else(|| format_err("transcript", format!("no captions for scene {:016x}", scene.entry.seed)))?;
                texts.iter().map(|t| model.encode_caption(t)).collect()
            } else {
                Vec::new()
            };
            Ok(Prepared {
                scene,
                backbone,
                captions,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub lr: f32,
    pub loss: f32,
}

/// Sample indices for every step: consecutive batches drawn from a fresh
/// shuffle of the training set each epoch.
pub fn batch_schedule(seed: u64, samples: usize, batch_size: usize, steps: u64) -> Vec<Vec<usize>> {
    let mut order = Vec::new();
    let mut epoch = 0;
    let mut next = 0;
    (0..steps)
        .map(|_| {
            (0..batch_size)
                .map(|_| {
                    if next == order.len() {
                        order = (0..samples).collect();
                        order.shuffle(&mut indexed_substream(seed, "batches", epoch));
                        epoch += 1;
                        next = 0;
                    }
                    next += 1;
                    order[next - 1]
                })
                .collect()
        })
        .collect()
}

/// Runs `steps` optimizer steps on `data`. Per-sample gradients are
/// computed on `pool` and reduced in batch order, so the result does not
/// depend on the thread count. `observe` sees every step's row and gradients.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut Model,
    optimizer: &mut OptimizerState,
    data: &[Prepared<'_>],
    seed: u64,
    batch_size: usize,
    steps: u64,
    pool: &rayon::ThreadPool,
    mut observe: impl FnMut(&LossRow, &[SampleGradient]),
) -> Result<Vec<LossRow>> {
    if data.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    let mut rows = Vec::with_capacity(steps as usize);
    for batch in batch_schedule(seed, data.len(), batch_size, steps) {
        let lr = optimizer.lr();
        let m = &*model;
        let parts = pool.install(|| {
            batch
                .par_iter()
                .map(|&i| sample_gradient(m, &data[i].sample()))
                .collect::<std::result::Result<Vec<_>, _>>()
        })?;
        let loss = apply_gradients(model, optimizer, &parts)?;
        let row = LossRow {
            step: optimizer.step,
            lr,
            loss,
        };
        observe(&row, &parts);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Predictions for `data` and the confusion matrix they produce.
pub fn evaluate(
    model: &Model,
    data: &[Prepared<'_>],
    pool: &rayon::ThreadPool,
) -> Result<(ConfusionMatrix, Vec<Prediction>)> {
    let preds = pool.install(|| {
        data.par_iter()
            .map(|p| predict(model, &p.sample()))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    let mut cm = ConfusionMatrix::new(model.config.num_classes);
    for (p, d) in preds.iter().zip(data) {
        let gt = &d.scene.labels;
        cm.accumulate(&p.labels.data, &gt.data, gt.width, None)?;
    }
    Ok((cm, preds))
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}
