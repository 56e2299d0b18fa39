use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::similarity::number_word;
use super::SceneContext;
use crate::error::{Error, Result};
use crate::rng::indexed_substream;
use crate::scene::{class_region, Region};

/// A captioning expert. `attempt` starts at 1 and grows with each
/// regeneration of the same scene.
pub trait MllmClient {
    fn generate(&self, scene: &SceneContext<'_>, prompt: &str, attempt: u32) -> Result<String>;
}

/// Damage the stub applies to its first attempt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Corruption {
    #[default]
    None,
    /// Counts become "some"; shares are left out.
    DropNumbers,
    /// Relations and positions are left out.
    DropRelations,
    /// Words are dropped and filler inserted at random.
    Noise,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [
        Corruption::None,
        Corruption::DropNumbers,
        Corruption::DropRelations,
        Corruption::Noise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Corruption::None => "none",
            Corruption::DropNumbers => "drop_numbers",
            Corruption::DropRelations => "drop_relations",
            Corruption::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// Offline expert that describes a scene from its metadata (and label
/// raster, when given, for absolute positions). `style` selects one of
/// three phrasings so that several experts disagree in wording only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StubClient {
    pub style: usize,
    pub corruption: Corruption,
}

const FILLER: [&str; 6] = ["really", "somewhat", "image", "view", "perhaps", "texture"];

struct Facts {
    /// (name, count, percent) for each object class with pixels.
    objects: Vec<(String, u32, u32)>,
    ground: Option<(String, u32)>,
    relations: Vec<String>,
    positions: Vec<String>,
}

fn position_words(r: &Region, height: usize, width: usize) -> &'static str {
    let third = |v: f64, n: usize| ((v * 3.0 / n as f64) as usize).min(2);
    match (third(r.centroid_row, height), third(r.centroid_col, width)) {
        (0, 0) => "north-west",
        (0, 1) => "north",
        (0, _) => "north-east",
        (1, 0) => "west",
        (1, 1) => "center",
        (1, _) => "east",
        (_, 0) => "south-west",
        (_, 1) => "south",
        _ => "south-east",
    }
}

fn percent(p: f64) -> u32 {
    libm::round(p * 100.0) as u32
}

impl StubClient {
    pub fn new(style: usize, corruption: Corruption) -> Self {
        Self { style, corruption }
    }

    fn facts(scene: &SceneContext<'_>) -> Facts {
        let meta = scene.metadata;
        let name = |c: usize| scene.class_names[c].to_lowercase();
        let mut objects = Vec::new();
        let mut ground = None;
        for c in 0..meta.num_classes().min(scene.class_names.len()) {
            if !meta.present(c) {
                continue;
            }
            let pct = percent(meta.class_proportions[c]);
            if meta.class_counts[c] == 0 {
                ground = Some((name(c), pct));
            } else {
                objects.push((name(c), meta.class_counts[c], pct));
            }
        }
        let relations = meta
            .relations
            .iter()
            .map(|r| format!("the {} is {} the {}", name(r.subject), r.predicate.phrase(), name(r.object)))
            .collect();
        let mut positions = Vec::new();
        if let Some(labels) = scene.labels {
            for c in 1..meta.num_classes().min(scene.class_names.len()) {
                if meta.class_counts[c] == 0 {
                    continue;
                }
                if let Some(region) = class_region(labels, c as u8) {
                    let at = position_words(&region, labels.height, labels.width);
                    positions.push(format!("the {} lies in the {at}", name(c)));
                }
            }
        }
        Facts {
            objects,
            ground,
            relations,
            positions,
        }
    }

    fn compose(&self, facts: &Facts, numbers: bool, relations: bool) -> String {
        let count = |n: u32| if numbers { number_word(n) } else { "some".to_string() };
        let noun = |name: &str, n: u32| {
            if numbers && n == 1 {
                format!("{} {name} region", count(n))
            } else {
                format!("{} {name} regions", count(n))
            }
        };
        let mut sentences: Vec<String> = Vec::new();
        match self.style % 3 {
            0 => {
                let items: Vec<String> = facts.objects.iter().map(|(nm, n, _)| noun(nm, *n)).collect();
                if !items.is_empty() {
                    sentences.push(format!("The scene contains {}", items.join(", ")));
                }
                if let Some((g, pct)) = &facts.ground {
                    sentences.push(if numbers {
                        format!("Bare {g} covers {pct}% of the image")
                    } else {
                        format!("Bare {g} fills the rest of the image")
                    });
                }
                if relations {
                    sentences.extend(facts.relations.iter().cloned());
                    sentences.extend(facts.positions.iter().cloned());
                }
            }
            1 => {
                if relations {
                    sentences.extend(facts.positions.iter().cloned());
                    sentences.extend(facts.relations.iter().cloned());
                }
                for (nm, n, pct) in &facts.objects {
                    sentences.push(if numbers {
                        format!("I count {} taking up {pct}%", noun(nm, *n))
                    } else {
                        format!("I count {}", noun(nm, *n))
                    });
                }
                if let Some((g, _)) = &facts.ground {
                    sentences.push(format!("Everything else is {g}"));
                }
            }
            _ => {
                if let Some((g, pct)) = &facts.ground {
                    sentences.push(if numbers {
                        format!("Mostly {g} at {pct}%")
                    } else {
                        format!("Mostly {g}")
                    });
                }
                for (nm, n, pct) in &facts.objects {
                    sentences.push(if numbers {
                        format!("{nm}: {} with {pct}% coverage", noun(nm, *n))
                    } else {
                        format!("{nm}: {}", noun(nm, *n))
                    });
                }
                if relations {
                    let rel: Vec<String> = facts.relations.clone();
                    if !rel.is_empty() {
                        sentences.push(format!("Layout: {}", rel.join("; ")));
                    }
                    sentences.extend(facts.positions.iter().cloned());
                }
            }
        }
        let mut text = String::new();
        for s in sentences {
            let mut chars = s.chars();
            if let Some(first) = chars.next() {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.extend(first.to_uppercase());
                text.push_str(chars.as_str());
                text.push('.');
            }
        }
        text
    }

    fn add_noise(&self, text: &str, seed: u64) -> String {
        let mut rng = indexed_substream(seed, "caption-noise", self.style as u64);
        let mut out: Vec<&str> = Vec::new();
        for w in text.split_whitespace() {
            if rng.random_bool(0.25) {
                out.push(FILLER[rng.random_range(0..FILLER.len())]);
            }
            if !rng.random_bool(0.4) {
                out.push(w);
            }
        }
        out.join(" ")
    }
}

impl MllmClient for StubClient {
    fn generate(&self, scene: &SceneContext<'_>, _prompt: &str, attempt: u32) -> Result<String> {
        if attempt == 0 {
            return Err(Error::Client("attempts are numbered from 1".into()));
        }
        let facts = Self::facts(scene);
        let corruption = if attempt == 1 { self.corruption } else { Corruption::None };
        Ok(match corruption {
            Corruption::None => self.compose(&facts, true, true),
            Corruption::DropNumbers => self.compose(&facts, false, true),
            Corruption::DropRelations => self.compose(&facts, true, false),
            Corruption::Noise => self.add_noise(&self.compose(&facts, true, true), scene.seed),
        })
    }
}

/// Returns fixed captions by attempt (the last one repeats) and counts calls.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    script: Vec<String>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl MllmClient for ScriptedClient {
    fn generate(&self, _scene: &SceneContext<'_>, _prompt: &str, attempt: u32) -> Result<String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let last = self
            .script
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Client("empty script".into()))?;
        let i = (attempt.max(1) as usize - 1).min(last);
        Ok(self.script[i].clone())
    }
}
