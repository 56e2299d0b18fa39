//! Synthetic dataset on disk: one `MPT1` image and one `MPL1` label raster
//! per scene, listed with their metadata in `manifest.jsonl`.

use std::fs;
use std::path::{Path, PathBuf};

use mpers_core::rng::Fnv64;
use mpers_core::scene::{generate_scene, make_split, LabelMap, Predicate, Relation, SceneMetadata, SceneParams};
use mpers_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::Split;
use crate::error::{format_err, Context, Error, Result};
use crate::formats::{load_labels, load_tensor, save_labels, save_tensor, write_atomic};

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub split: Split,
    pub image: String,
    pub labels: String,
    pub class_counts: Vec<u32>,
    pub class_proportions: Vec<f64>,
    pub relations: Vec<RelationRecord>,
}

impl ManifestEntry {
    pub fn metadata(&self) -> Result<SceneMetadata> {
        let relations = self
            .relations
            .iter()
            .map(|r| {
                Predicate::parse(&r.predicate)
                    .map(|predicate| Relation {
                        subject: r.subject,
                        predicate,
                        object: r.object,
                    })
                    .ok_or_else(|| format_err("manifest", format!("unknown predicate {:?}", r.predicate)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneMetadata {
            class_counts: self.class_counts.clone(),
            class_proportions: self.class_proportions.clone(),
            relations,
        })
    }
}

/// Seed of scene `index` in a run seeded with `run_seed`.
pub fn scene_seed(run_seed: u64, index: u64) -> u64 {
    let mut h = Fnv64::new();
    h.write(b"scene");
    h.write_u64(run_seed);
    h.write_u64(index);
    h.finish()
}

fn file_stem(seed: u64) -> String {
    format!("scene-{seed:016x}")
}

/// Generates `count` scenes into `dir` and writes the manifest, refusing to
/// replace an existing manifest unless `force` is set.
pub fn generate_dataset(
    dir: &Path,
    run_seed: u64,
    count: usize,
    train_fraction: f64,
    params: &SceneParams,
    force: bool,
) -> Result<Vec<ManifestEntry>> {
    let manifest = dir.join(MANIFEST);
    if manifest.exists() && !force {
        return Err(Error::Exists(manifest));
    }
    let seeds: Vec<u64> = (0..count as u64).map(|i| scene_seed(run_seed, i)).collect();
    let (train, _) = make_split(&seeds, train_fraction)?;
    let mut entries = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let (scene, meta) = generate_scene(seed, params)?;
        let stem = file_stem(seed);
        let image = format!("scenes/{stem}.mpt");
        let labels = format!("scenes/{stem}.mpl");
        save_tensor(&dir.join(&image), &scene.image)?;
        save_labels(&dir.join(&labels), &scene.labels)?;
        entries.push(ManifestEntry {
            seed,
            split: if train.contains(&seed) { Split::Train } else { Split::Eval },
            image,
            labels,
            class_counts: meta.class_counts,
            class_proportions: meta.class_proportions,
            relations: meta
                .relations
                .iter()
                .map(|r| RelationRecord {
                    subject: r.subject,
                    predicate: r.predicate.as_str().into(),
                    object: r.object,
                })
                .collect(),
        });
    }
    let mut text = String::new();
    for e in &entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    write_atomic(&manifest, text.as_bytes())?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).at(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<Vec<_>>>()
        .at(&path)
}

/// A scene loaded from disk.
#[derive(Clone, Debug)]
pub struct SceneRecord {
    pub entry: ManifestEntry,
    pub image: Tensor,
    pub labels: LabelMap,
    pub metadata: SceneMetadata,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub scenes: Vec<SceneRecord>,
}

impl Dataset {
    /// Loads every scene and checks it against the expected class count and
    /// image size.
    pub fn load(dir: &Path, num_classes: usize, image_size: usize) -> Result<Self> {
        let mut scenes = Vec::new();
        for entry in read_manifest(dir)? {
            let image = load_tensor(&dir.join(&entry.image))?;
            let labels = load_labels(&dir.join(&entry.labels))?;
            let metadata = entry.metadata().at(&dir.join(MANIFEST))?;
            if image.shape() != [3, image_size, image_size]
                || (labels.height, labels.width) != (image_size, image_size)
                || metadata.num_classes() != num_classes
            {
                return Err(Error::Config(format!(
                    "scene {:016x} ({:?}, {}×{}, {} classes) does not match the configured {num_classes} classes at {image_size}×{image_size}; regenerate the data",
                    entry.seed,
                    image.shape(),
                    labels.height,
                    labels.width,
                    metadata.num_classes()
                )));
            }
            scenes.push(SceneRecord {
                entry,
                image,
                labels,
                metadata,
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            scenes,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&SceneRecord> {
        self.scenes.iter().filter(|s| s.entry.split == split).collect()
    }
}
