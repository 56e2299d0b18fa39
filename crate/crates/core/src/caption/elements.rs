use alloc::string::String;
use alloc::vec::Vec;

/// Number words accepted besides digits.
const NUMBER_WORDS: [&str; 24] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
    "several", "many", "few", "no",
];

const LOCATION_WORDS: [&str; 12] = [
    "left", "right", "above", "below", "adjacent", "between", "north", "south", "east", "west",
    "center", "near",
];

/// Three-element check result.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ElementFlags {
    pub has_number: bool,
    pub has_category: bool,
    pub has_location: bool,
}

impl ElementFlags {
    pub fn all(self) -> bool {
        self.has_number && self.has_category && self.has_location
    }
}

/// Lower-cased alphanumeric runs of `text`.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn plural_match(word: &str, stem: &str) -> bool {
    if word == stem {
        return true;
    }
    if let Some(rest) = word.strip_prefix(stem) {
        if rest == "s" || rest == "es" {
            return true;
        }
    }
    // city -> cities
    stem.strip_suffix('y')
        .and_then(|base| word.strip_prefix(base))
        .is_some_and(|rest| rest == "ies")
}

/// Whether the word sequence `phrase` occurs in `ws`, allowing a plural
/// ending on its last word.
pub(crate) fn contains_phrase(ws: &[String], phrase: &[String]) -> bool {
    let Some((last, head)) = phrase.split_last() else {
        return false;
    };
    if ws.len() < phrase.len() {
        return false;
    }
    (0..=ws.len() - phrase.len()).any(|i| {
        head.iter().zip(&ws[i..]).all(|(p, w)| p == w) && plural_match(&ws[i + head.len()], last)
    })
}

/// Checks a caption for a number, a vocabulary class and a location phrase.
/// Case and punctuation are ignored.
pub fn check_elements(text: &str, vocabulary: &[String]) -> ElementFlags {
    let ws = words(text);
    let has_number = text.chars().any(|c| c.is_ascii_digit())
        || ws.iter().any(|w| NUMBER_WORDS.contains(&w.as_str()));
    let has_category = vocabulary.iter().any(|name| contains_phrase(&ws, &words(name)));
    let has_location = ws.iter().any(|w| LOCATION_WORDS.contains(&w.as_str()))
        || ws.windows(2).any(|p| p[0] == "next" && p[1] == "to");
    ElementFlags {
        has_number,
        has_category,
        has_location,
    }
}
