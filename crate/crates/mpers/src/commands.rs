//! The workflow commands behind the `mpers` binary.
//!
//! Run directory layout:
//!
//! ```text
//! data/manifest.jsonl, data/scenes/*.mpt, data/scenes/*.mpl
//! captions/transcript.jsonl
//! train/checkpoint.mpck, train/loss.csv
//! eval/metrics.json, eval/metrics.txt, eval/guidance.jsonl, eval/gates.jsonl
//! ablation/ablation.json, ablation/ablation.txt
//! timing/timing.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mpers_core::caption::{MllmClient, PromptSet, SceneContext, StubClient};
use mpers_core::model::{Components, Model};
use mpers_core::optim::OptimizerState;
use mpers_core::scene::{default_class_names, generate_scene, SceneParams};
use mpers_core::train::{predict, Sample, SampleGradient};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{RunConfig, Split};
use crate::dataset::{generate_dataset, Dataset, ManifestEntry};
use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::report::{
    ablation_table, guidance_jsonl, metrics_table, AblationResult, AblationRow, MetricsJson, RunScores, RunSummary,
};
use crate::trainer::{evaluate, prepare, thread_pool, train, write_loss_csv, LossRow};
use crate::transcript::{caption_scenes, final_captions, read_transcript, CaptionSummary, TRANSCRIPT};

/// Output locations under a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn transcript(&self) -> PathBuf {
        self.root.join("captions").join(TRANSCRIPT)
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("train").join("checkpoint.mpck")
    }
    pub fn loss(&self) -> PathBuf {
        self.root.join("train").join("loss.csv")
    }
    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("eval").join("metrics.json")
    }
    pub fn metrics_table(&self) -> PathBuf {
        self.root.join("eval").join("metrics.txt")
    }
    pub fn guidance(&self) -> PathBuf {
        self.root.join("eval").join("guidance.jsonl")
    }
    pub fn gates(&self) -> PathBuf {
        self.root.join("eval").join("gates.jsonl")
    }
    pub fn ablation_json(&self) -> PathBuf {
        self.root.join("ablation").join("ablation.json")
    }
    pub fn ablation_table(&self) -> PathBuf {
        self.root.join("ablation").join("ablation.txt")
    }
    pub fn timing(&self) -> PathBuf {
        self.root.join("timing").join("timing.json")
    }
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    Ok(())
}

/// Progress messages from long-running commands.
pub trait Progress {
    fn step(&mut self, _label: &str, _row: &LossRow, _grads: &[SampleGradient]) {}
    fn note(&mut self, _message: &str) {}
}

/// Discards all progress.
pub struct Quiet;

impl Progress for Quiet {}

pub fn gen_data(config: &RunConfig, force: bool) -> Result<Vec<ManifestEntry>> {
    let d = &config.data;
    generate_dataset(
        &RunPaths::new(&config.run.out_dir).data(),
        config.run.seed,
        d.scenes,
        d.train_fraction,
        &d.scene_params(),
        force,
    )
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let d = &config.data;
    Dataset::load(&RunPaths::new(&config.run.out_dir).data(), d.num_classes, d.image_size)
}

pub fn caption(config: &RunConfig, force: bool) -> Result<CaptionSummary> {
    let paths = RunPaths::new(&config.run.out_dir);
    let data = load_dataset(config)?;
    caption_scenes(
        &paths.transcript(),
        &data.scenes,
        &default_class_names(config.data.num_classes),
        config.caption.experts,
        config.caption.corruption()?,
        &config.caption.check(),
        force,
    )
}

/// Final captions per scene, or `None` when the model reads no text.
fn load_captions(config: &RunConfig, components: Components, data: &Dataset) -> Result<Option<BTreeMap<u64, Vec<String>>>> {
    if !components.text_guidance {
        return Ok(None);
    }
    let lines = read_transcript(&RunPaths::new(&config.run.out_dir).transcript())?;
    let seeds: Vec<u64> = data.scenes.iter().map(|s| s.entry.seed).collect();
    final_captions(&lines, &seeds, config.caption.experts).map(Some)
}

/// A model trained from scratch with the given components and seed.
pub struct Fitted {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub losses: Vec<LossRow>,
}

#[allow(clippy::too_many_arguments)]
pub fn fit(
    config: &RunConfig,
    data: &Dataset,
    captions: Option<&BTreeMap<u64, Vec<String>>>,
    components: Components,
    seed: u64,
    steps: u64,
    label: &str,
    progress: &mut dyn Progress,
) -> Result<Fitted> {
    let mut model = Model::new(config.model_config_for(components, seed))?;
    let t = &config.train;
    let mut optimizer = OptimizerState::new(&model.params, t.adamw(), t.schedule(steps));
    let train_scenes = data.split(Split::Train);
    let prepared = prepare(&model, &train_scenes, captions)?;
    let pool = thread_pool(config.run.threads)?;
    let losses = train(
        &mut model,
        &mut optimizer,
        &prepared,
        seed,
        t.batch_size,
        steps,
        &pool,
        |row, grads| progress.step(label, row, grads),
    )?;
    Ok(Fitted {
        model,
        optimizer,
        losses,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub parameters: usize,
    pub first_loss: f32,
    pub final_loss: f32,
    pub checksum: String,
    pub frozen_checksum: String,
}

pub fn train_command(config: &RunConfig, force: bool, progress: &mut dyn Progress) -> Result<TrainSummary> {
    let paths = RunPaths::new(&config.run.out_dir);
    refuse_existing(&paths.checkpoint(), force)?;
    let data = load_dataset(config)?;
    let components = config.model.components();
    let captions = load_captions(config, components, &data)?;
    let f = fit(
        config,
        &data,
        captions.as_ref(),
        components,
        config.run.seed,
        config.train.steps,
        "train",
        progress,
    )?;
    save_checkpoint(&paths.checkpoint(), &f.model, &f.optimizer)?;
    write_loss_csv(&paths.loss(), &f.losses)?;
    Ok(TrainSummary {
        steps: f.optimizer.step,
        parameters: f.model.parameter_count(),
        first_loss: f.losses.first().map_or(f32::NAN, |r| r.loss),
        final_loss: f.losses.last().map_or(f32::NAN, |r| r.loss),
        checksum: format!("{:016x}", f.model.params.checksum()),
        frozen_checksum: format!("{:016x}", f.model.params.frozen_checksum()),
    })
}

fn scores(
    config: &RunConfig,
    model: &Model,
    data: &Dataset,
    captions: Option<&BTreeMap<u64, Vec<String>>>,
    split: Split,
) -> Result<(MetricsJson, Vec<u64>, Vec<mpers_core::train::Prediction>)> {
    let scenes = data.split(split);
    if scenes.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", split.as_str())));
    }
    let prepared = prepare(model, &scenes, captions)?;
    let (cm, preds) = evaluate(model, &prepared, &thread_pool(config.run.threads)?)?;
    let names = default_class_names(model.config.num_classes);
    let metrics = MetricsJson::new(split.as_str(), scenes.len(), &names, &cm)?;
    let seeds = scenes.iter().map(|s| s.entry.seed).collect();
    Ok((metrics, seeds, preds))
}

pub fn eval_command(config: &RunConfig, force: bool) -> Result<MetricsJson> {
    let paths = RunPaths::new(&config.run.out_dir);
    refuse_existing(&paths.metrics_json(), force)?;
    let (model, _) = load_checkpoint(&paths.checkpoint())?;
    let data = load_dataset(config)?;
    let captions = load_captions(config, model.config.components, &data)?;
    let (metrics, seeds, preds) = scores(config, &model, &data, captions.as_ref(), config.eval.split)?;
    write_atomic(&paths.metrics_json(), metrics.to_json()?.as_bytes())?;
    write_atomic(&paths.metrics_table(), metrics_table(&metrics).as_bytes())?;
    let (guidance, gates) = guidance_jsonl(&seeds, &preds)?;
    write_atomic(&paths.guidance(), guidance.as_bytes())?;
    write_atomic(&paths.gates(), gates.as_bytes())?;
    Ok(metrics)
}

/// Trains and scores every ladder configuration for each ablation seed on
/// the shared dataset and transcript.
pub fn ablate_command(config: &RunConfig, force: bool, progress: &mut dyn Progress) -> Result<AblationResult> {
    let paths = RunPaths::new(&config.run.out_dir);
    refuse_existing(&paths.ablation_json(), force)?;
    let data = load_dataset(config)?;
    let captions = load_captions(config, Components::FULL, &data)?;
    let split = config.eval.split;
    let a = &config.ablation;
    let mut rows = Vec::new();
    for (name, components) in Components::ladder() {
        let mut runs = Vec::new();
        let mut parameters = 0;
        for &seed in &a.seeds {
            let label = format!("{name} seed {seed}");
            let f = fit(config, &data, captions.as_ref(), components, seed, a.steps, &label, progress)?;
            parameters = f.model.parameter_count();
            let (m, _, _) = scores(config, &f.model, &data, captions.as_ref(), split)?;
            progress.note(&format!("{label}: mIoU {:.4}", m.miou));
            runs.push(RunScores {
                seed,
                oa: m.oa,
                miou: m.miou,
                mf1: m.mf1,
            });
        }
        rows.push(AblationRow {
            name: name.into(),
            use_ldpe: components.detail_encoder,
            use_lqga: components.text_guidance,
            use_dmte: components.expert_mixture,
            parameters,
            median: RunSummary::median_of(&runs),
            runs,
        });
    }
    let result = AblationResult {
        split: split.as_str().into(),
        steps: a.steps,
        seeds: a.seeds.clone(),
        rows,
    };
    write_atomic(&paths.ablation_json(), (serde_json::to_string_pretty(&result)? + "\n").as_bytes())?;
    write_atomic(&paths.ablation_table(), ablation_table(&result).as_bytes())?;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub size: usize,
    pub warmup: usize,
    pub runs: usize,
    pub median_ms: f64,
    pub samples_ms: Vec<f64>,
}

/// Median wall-clock time of one full forward pass, caption encoding
/// included, on a synthetic scene of `timing.size` pixels, using the
/// trained checkpoint's weights.
pub fn time_command(config: &RunConfig, force: bool) -> Result<TimingResult> {
    let paths = RunPaths::new(&config.run.out_dir);
    refuse_existing(&paths.timing(), force)?;
    let (trained, _) = load_checkpoint(&paths.checkpoint())?;
    let t = &config.timing;
    let mut mc = trained.config.clone();
    mc.image_size = t.size;
    let mut model = Model::new(mc)?;
    for (_, p) in model.params.iter_mut() {
        let id = trained
            .params
            .find(&p.name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {:?}", p.name)))?;
        p.value = trained.params.value(id).clone();
    }
    let params = SceneParams {
        size: t.size,
        ..config.data.scene_params()
    };
    let (scene, meta) = generate_scene(config.run.seed, &params)?;
    let names = default_class_names(params.num_classes);
    let request = PromptSet::build(&names)?.request();
    let ctx = SceneContext {
        seed: scene.seed,
        metadata: &meta,
        class_names: &names,
        image: Some(&scene.image),
        labels: Some(&scene.labels),
    };
    let texts = (0..model.config.experts)
        .map(|e| StubClient::new(e, config.caption.corruption()?).generate(&ctx, &request, 1).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    let run_once = |model: &Model| -> Result<f64> {
        let start = Instant::now();
        let captions: Vec<_> = if model.uses_text() {
            texts.iter().map(|t| model.encode_caption(t)).collect()
        } else {
            Vec::new()
        };
        predict(
            model,
            &Sample {
                image: &scene.image,
                labels: &scene.labels,
                captions: &captions,
                backbone: None,
            },
        )?;
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    for _ in 0..t.warmup {
        run_once(&model)?;
    }
    let samples_ms = (0..t.runs).map(|_| run_once(&model)).collect::<Result<Vec<_>>>()?;
    let result = TimingResult {
        size: t.size,
        warmup: t.warmup,
        runs: t.runs,
        median_ms: crate::report::median(&samples_ms),
        samples_ms,
    };
    write_atomic(&paths.timing(), (serde_json::to_string_pretty(&result)? + "\n").as_bytes())?;
    Ok(result)
}
