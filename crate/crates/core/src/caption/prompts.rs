use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::rng::fnv64;

const INVENTORY: &str = "List every land-cover class you can see in this remote-sensing scene, \
choosing from: {classes}. For each class, say how many separate regions it forms.";
const PROPORTION: &str = "Estimate what share of the image each of these classes covers: {classes}. \
Give every share as a percentage.";
const RELATION: &str = "Describe where the regions of {classes} lie relative to one another, using \
left of, right of, above, below or adjacent to, and say which part of the image each occupies.";

/// The three perspective prompts, filled with a class vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSet {
    pub inventory: String,
    pub proportion: String,
    pub relation: String,
}

impl PromptSet {
    pub fn build(vocabulary: &[String]) -> Result<Self> {
        if vocabulary.is_empty() {
            return Err(Error::Contract("prompt vocabulary is empty".into()));
        }
        let classes = vocabulary.join(", ");
        let fill = |t: &str| t.replace("{classes}", &classes);
        Ok(Self {
            inventory: fill(INVENTORY),
            proportion: fill(PROPORTION),
            relation: fill(RELATION),
        })
    }

    pub fn as_array(&self) -> [&str; 3] {
        [&self.inventory, &self.proportion, &self.relation]
    }

    /// The single request sent to each expert: all three prompts in order.
    pub fn request(&self) -> String {
        self.as_array().join("\n")
    }
}

/// Hex FNV-1a of the request text, recorded with every transcript line.
pub fn prompt_hash(request: &str) -> String {
    format!("{:016x}", fnv64(request.as_bytes()))
}
