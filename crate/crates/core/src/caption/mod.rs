//! Multi-expert caption generation with similarity and element checks.
//!
//! Each expert receives one request made of three prompts (land-cover
//! inventory, class proportions, location relations). A caption is accepted
//! when its similarity to the scene reaches `tau` and it mentions a number,
//! a vocabulary class and a location; otherwise it is regenerated, up to a
//! fixed number of attempts.

mod check;
mod client;
mod elements;
mod prompts;
mod similarity;

pub use self::check::{run_check_loop, run_check_loop_logged, AttemptLog, CaptionRecord, CheckConfig};
pub use self::client::{Corruption, MllmClient, ScriptedClient, StubClient};
pub use self::elements::{check_elements, words, ElementFlags};
pub use self::prompts::{prompt_hash, PromptSet};
pub use self::similarity::{number_word, scene_keywords, KeywordRecall, SimilarityProvider};

use alloc::string::String;

use crate::scene::{LabelMap, SceneMetadata};
use crate::tensor::Tensor;

/// What a client or scorer may look at for one scene.
#[derive(Clone, Copy, Debug)]
pub struct SceneContext<'a> {
    pub seed: u64,
    pub metadata: &'a SceneMetadata,
    pub class_names: &'a [String],
    pub image: Option<&'a Tensor>,
    pub labels: Option<&'a LabelMap>,
}
