use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::elements::{contains_phrase, words};
use super::SceneContext;
use crate::error::Result;
use crate::scene::SceneMetadata;

const COUNT_WORDS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

/// Word form of a count: `one`..`twenty`, digits above that.
pub fn number_word(n: u32) -> String {
    match n {
        1..=20 => COUNT_WORDS[n as usize - 1].to_string(),
        _ => n.to_string(),
    }
}

/// Scores how well a caption matches a scene, in [0, 1].
pub trait SimilarityProvider {
    fn score(&self, caption: &str, scene: &SceneContext<'_>) -> Result<f64>;
}

/// Keywords a faithful caption of the scene should mention: the names of
/// classes with pixels, the word form of each object count, and one word per
/// spatial predicate. Sorted, without duplicates.
pub fn scene_keywords(metadata: &SceneMetadata, class_names: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (c, name) in class_names.iter().enumerate().take(metadata.num_classes()) {
        if metadata.present(c) {
            out.push(name.to_lowercase());
        }
    }
    for &n in &metadata.class_counts {
        if n > 0 {
            out.push(number_word(n));
        }
    }
    for r in &metadata.relations {
        out.push(r.predicate.keyword().to_string());
    }
    out.sort();
    out.dedup();
    out
}

/// Offline scorer: fraction of scene keywords the caption contains
/// (keyword recall). Scores 1 when the scene yields no keywords.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeywordRecall;

impl KeywordRecall {
    pub fn recall(caption: &str, keywords: &[String]) -> f64 {
        if keywords.is_empty() {
            return 1.0;
        }
        let ws = words(caption);
        let hits = keywords
            .iter()
            .filter(|k| contains_phrase(&ws, &words(k)))
            .count();
        hits as f64 / keywords.len() as f64
    }
}

impl SimilarityProvider for KeywordRecall {
    fn score(&self, caption: &str, scene: &SceneContext<'_>) -> Result<f64> {
        Ok(Self::recall(caption, &scene_keywords(scene.metadata, scene.class_names)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn kw(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_examples() {
        let keys = kw(&["building", "road", "tree", "two", "three", "left", "above", "ground"]);
        let full = "ground, two buildings and three roads; a tree left of and above a road";
        assert_eq!(KeywordRecall::recall(full, &keys), 1.0);
        assert_eq!(KeywordRecall::recall("a calm picture", &keys), 0.0);
        // five of eight keywords
        let part = "two buildings, three roads, one ground patch";
        assert_eq!(KeywordRecall::recall(part, &keys), 0.625);
    }

    #[test]
    fn number_words() {
        assert_eq!(number_word(3), "three");
        assert_eq!(number_word(20), "twenty");
        assert_eq!(number_word(21), "21");
    }

    #[test]
    fn keywords_from_metadata() {
        use crate::scene::{Predicate, Relation};
        let meta = SceneMetadata {
            class_counts: vec![0, 2, 0, 1],
            class_proportions: vec![0.7, 0.2, 0.0, 0.1],
            relations: vec![Relation {
                subject: 1,
                predicate: Predicate::LeftOf,
                object: 3,
            }],
        };
        let names = kw(&["ground", "building", "road", "tree"]);
        assert_eq!(
            scene_keywords(&meta, &names),
            kw(&["building", "ground", "left", "one", "tree", "two"])
        );
    }
}
