//! Caption transcripts: one JSON line per client call.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mpers_core::caption::{
    prompt_hash, run_check_loop_logged, CheckConfig, Corruption, ElementFlags, KeywordRecall, MllmClient, PromptSet,
    SceneContext, StubClient,
};
use serde::{Deserialize, Serialize};

use crate::dataset::SceneRecord;
use crate::error::{format_err, Context, Error, Result};
use crate::formats::write_atomic;

pub const TRANSCRIPT: &str = "transcript.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub number: bool,
    pub category: bool,
    pub location: bool,
}

impl From<ElementFlags> for Flags {
    fn from(f: ElementFlags) -> Self {
        Self {
            number: f.has_number,
            category: f.has_category,
            location: f.has_location,
        }
    }
}

impl Flags {
    pub fn all(self) -> bool {
        self.number && self.category && self.location
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub scene_seed: u64,
    pub expert_id: usize,
    pub attempt: u32,
    pub prompt_hash: String,
    pub text: String,
    pub similarity: f64,
    pub flags: Flags,
    pub accepted: bool,
}

/// Outcome counts of a captioning run.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionSummary {
    pub scenes: usize,
    pub experts: usize,
    /// Final captions that passed the check.
    pub accepted: usize,
    pub lines: Vec<TranscriptLine>,
}

impl CaptionSummary {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / (self.scenes * self.experts) as f64
    }
}

/// Captions every scene with `experts` stub clients and writes the transcript.
pub fn caption_scenes(
    path: &Path,
    scenes: &[SceneRecord],
    class_names: &[String],
    experts: usize,
    corruption: Corruption,
    check: &CheckConfig,
    force: bool,
) -> Result<CaptionSummary> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    let clients: Vec<StubClient> = (0..experts).map(|e| StubClient::new(e, corruption)).collect();
    let refs: Vec<&dyn MllmClient> = clients.iter().map(|c| c as &dyn MllmClient).collect();
    let summary = caption_with(&refs, scenes, class_names, check)?;
    let mut text = String::new();
    for line in &summary.lines {
        text.push_str(&serde_json::to_string(line)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(summary)
}

/// Runs the check loop with the given clients over `scenes`.
pub fn caption_with(
    clients: &[&dyn MllmClient],
    scenes: &[SceneRecord],
    class_names: &[String],
    check: &CheckConfig,
) -> Result<CaptionSummary> {
    let request = PromptSet::build(class_names)?.request();
    let hash = prompt_hash(&request);
    let scorer = KeywordRecall;
    let mut lines = Vec::new();
    let mut accepted = 0;
    for scene in scenes {
        let ctx = SceneContext {
            seed: scene.entry.seed,
            metadata: &scene.metadata,
            class_names,
            image: Some(&scene.image),
            labels: Some(&scene.labels),
        };
        let (records, logs) = run_check_loop_logged(clients, &ctx, &request, &scorer, check)?;
        accepted += records.iter().filter(|r| r.accepted).count();
        lines.extend(logs.into_iter().map(|l| TranscriptLine {
            scene_seed: scene.entry.seed,
            expert_id: l.expert_id,
            attempt: l.attempt,
            prompt_hash: hash.clone(),
            text: l.text,
            similarity: l.similarity,
            flags: l.flags.into(),
            accepted: l.accepted,
        }));
    }
    Ok(CaptionSummary {
        scenes: scenes.len(),
        experts: clients.len(),
        accepted,
        lines,
    })
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptLine>> {
    let text = fs::read_to_string(path).at(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<Vec<_>>>()
        .at(path)
}

/// The last attempt of each expert, per scene seed, in expert order.
/// Every listed scene must have captions from experts `0..experts`.
pub fn final_captions(lines: &[TranscriptLine], seeds: &[u64], experts: usize) -> Result<BTreeMap<u64, Vec<String>>> {
    let mut last: BTreeMap<(u64, usize), &TranscriptLine> = BTreeMap::new();
    for line in lines {
        let slot = last.entry((line.scene_seed, line.expert_id)).or_insert(line);
        if line.attempt >= slot.attempt {
            *slot = line;
        }
    }
    let mut out = BTreeMap::new();
    for &seed in seeds {
        let caps = (0..experts)
            .map(|e| {
                last.get(&(seed, e)).map(|l| l.text.clone()).ok_or_else(|| {
                    format_err(
                        "transcript",
                        format!("no caption from expert {e} for scene {seed:016x}; rerun caption"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(seed, caps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, Dataset};
    use mpers_core::scene::{default_class_names, SceneParams};

    fn dataset(dir: &Path, n: usize) -> Dataset {
        generate_dataset(dir, 2, n, 0.5, &SceneParams::default(), false).unwrap();
        Dataset::load(dir, 5, 64).unwrap()
    }

    #[test]
    fn clean_stub_is_accepted_first_time() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(dir.path(), 6);
        let path = dir.path().join(TRANSCRIPT);
        let names = default_class_names(5);
        let s = caption_scenes(&path, &ds.scenes, &names, 3, Corruption::None, &CheckConfig::default(), false).unwrap();
        assert_eq!(s.acceptance_rate(), 1.0);
        assert_eq!(s.lines.len(), 18);
        assert!(s.lines.iter().all(|l| l.attempt == 1 && l.accepted));
        assert_eq!(read_transcript(&path).unwrap(), s.lines);
        let seeds: Vec<u64> = ds.scenes.iter().map(|s| s.entry.seed).collect();
        let caps = final_captions(&s.lines, &seeds, 3).unwrap();
        assert_eq!(caps.len(), 6);
        assert!(final_captions(&s.lines, &seeds, 4).is_err());
        assert!(matches!(
            caption_scenes(&path, &ds.scenes, &names, 3, Corruption::None, &CheckConfig::default(), false),
            Err(Error::Exists(_))
        ));
    }

    #[test]
    fn dropped_numbers_cost_one_retry() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(dir.path(), 4);
        let names = default_class_names(5);
        let path = dir.path().join(TRANSCRIPT);
        let s = caption_scenes(
            &path,
            &ds.scenes,
            &names,
            3,
            Corruption::DropNumbers,
            &CheckConfig::default(),
            false,
        )
        .unwrap();
        let seeds: Vec<u64> = ds.scenes.iter().map(|s| s.entry.seed).collect();
        for seed in seeds {
            for e in 0..3 {
                let tries: Vec<_> = s.lines.iter().filter(|l| l.scene_seed == seed && l.expert_id == e).collect();
                assert_eq!(tries.len(), 2);
                assert!(!tries[0].flags.number && tries[1].accepted);
            }
        }
    }
}
