use alloc::string::String;
use alloc::vec::Vec;

use super::client::MllmClient;
use super::elements::{check_elements, ElementFlags};
use super::similarity::SimilarityProvider;
use super::SceneContext;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckConfig {
    /// Minimum similarity for acceptance.
    pub tau: f64,
    /// Client calls allowed per expert and scene.
    pub max_attempts: u32,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            tau: 0.55,
            max_attempts: 3,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Contract(alloc::format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.max_attempts == 0 {
            return Err(Error::Contract("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Final caption of one expert for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub expert_id: usize,
    pub text: String,
    pub similarity: f64,
    pub flags: ElementFlags,
    pub attempts: u32,
    pub accepted: bool,
}

/// One client call, for transcripts.
#[derive(Clone, Debug, PartialEq)]
pub struct AttemptLog {
    pub expert_id: usize,
    pub attempt: u32,
    pub text: String,
    pub similarity: f64,
    pub flags: ElementFlags,
    pub accepted: bool,
}

/// Runs the generate/check/regenerate loop for every expert and returns one
/// record per expert.
pub fn run_check_loop(
    experts: &[&dyn MllmClient],
    scene: &SceneContext<'_>,
    request: &str,
    scorer: &dyn SimilarityProvider,
    config: &CheckConfig,
) -> Result<Vec<CaptionRecord>> {
    run_check_loop_logged(experts, scene, request, scorer, config).map(|(records, _)| records)
}

/// As [`run_check_loop`], also returning every attempt in call order.
pub fn run_check_loop_logged(
    experts: &[&dyn MllmClient],
    scene: &SceneContext<'_>,
    request: &str,
    scorer: &dyn SimilarityProvider,
    config: &CheckConfig,
) -> Result<(Vec<CaptionRecord>, Vec<AttemptLog>)> {
    config.validate()?;
    if experts.is_empty() {
        return Err(Error::Contract("no caption experts configured".into()));
    }
    let mut records = Vec::with_capacity(experts.len());
    let mut log = Vec::new();
    for (expert_id, client) in experts.iter().enumerate() {
        let mut attempt = 1;
        loop {
            let text = client.generate(scene, request, attempt)?;
            let similarity = scorer.score(&text, scene)?;
            let flags = check_elements(&text, scene.class_names);
            let accepted = similarity >= config.tau && flags.all();
            log.push(AttemptLog {
                expert_id,
                attempt,
                text: text.clone(),
                similarity,
                flags,
                accepted,
            });
            if accepted || attempt == config.max_attempts {
                records.push(CaptionRecord {
                    expert_id,
                    text,
                    similarity,
                    flags,
                    attempts: attempt,
                    accepted,
                });
                break;
            }
            attempt += 1;
        }
    }
    Ok((records, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{Corruption, KeywordRecall, ScriptedClient, StubClient};
    use crate::scene::{Predicate, Relation, SceneMetadata};
    use alloc::string::ToString;
    use alloc::vec;

    fn meta() -> SceneMetadata {
        SceneMetadata {
            class_counts: vec![0, 2, 1],
            class_proportions: vec![0.6, 0.3, 0.1],
            relations: vec![Relation {
                subject: 1,
                predicate: Predicate::LeftOf,
                object: 2,
            }],
        }
    }

    fn names() -> Vec<String> {
        ["ground", "building", "road"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn valid_first_try() {
        let (m, n) = (meta(), names());
        let ctx = SceneContext {
            seed: 1,
            metadata: &m,
            class_names: &n,
            image: None,
            labels: None,
        };
        let stub = StubClient::new(0, Corruption::None);
        let recs = run_check_loop(&[&stub], &ctx, "", &KeywordRecall, &CheckConfig::default()).unwrap();
        assert_eq!(recs[0].attempts, 1);
        assert!(recs[0].accepted);
    }

    #[test]
    fn low_similarity_regenerates_once() {
        let (m, n) = (meta(), names());
        let ctx = SceneContext {
            seed: 1,
            metadata: &m,
            class_names: &n,
            image: None,
            labels: None,
        };
        // keywords: building, ground, left, one, road, two; "two buildings left
        // of one ground" hits 5 of 6 and "building left of two" only 3 of 6
        let script = ScriptedClient::new(["Building left of two.", "Two buildings left of one road on ground."]);
        let (recs, log) =
            run_check_loop_logged(&[&script], &ctx, "", &KeywordRecall, &CheckConfig::default()).unwrap();
        assert_eq!(log[0].similarity, 0.5);
        assert!(log[0].flags.all() && !log[0].accepted);
        assert_eq!(recs[0].attempts, 2);
        assert!(recs[0].accepted);
        assert_eq!(script.calls(), 2);
    }

    #[test]
    fn exhausted_attempts_return_unaccepted() {
        let (m, n) = (meta(), names());
        let ctx = SceneContext {
            seed: 1,
            metadata: &m,
            class_names: &n,
            image: None,
            labels: None,
        };
        let script = ScriptedClient::new(["nothing here"]);
        let recs = run_check_loop(&[&script], &ctx, "", &KeywordRecall, &CheckConfig::default()).unwrap();
        assert_eq!(recs[0].attempts, 3);
        assert!(!recs[0].accepted);
        assert_eq!(script.calls(), 3);
        assert!(run_check_loop(&[], &ctx, "", &KeywordRecall, &CheckConfig::default()).is_err());
    }
}
