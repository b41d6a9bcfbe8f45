use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::models::{BOS, EOS, PAD, SEP};

/// Skill names in catalog order; a catalog of size `n` uses the first `n`.
pub const SKILL_NAMES: [&str; 16] = [
    "python",
    "java",
    "sql",
    "rust",
    "golang",
    "scala",
    "spark",
    "docker",
    "kubernetes",
    "linux",
    "react",
    "excel",
    "tableau",
    "hadoop",
    "kotlin",
    "swift",
];

/// Largest year count that can be rendered.
pub const MAX_YEARS: u32 = 15;

/// Benefit and perk sentences used as job filler lines.
pub const NOISE_TEMPLATES: [&str; 12] = [
    "we offer free lunch every day",
    "our team values open communication",
    "enjoy flexible remote work options",
    "competitive salary and annual bonus plan",
    "generous paid leave each year",
    "health dental and vision coverage included",
    "join a fast growing company today",
    "learning budget for every new employee",
    "modern office near public transit",
    "stock options for every employee",
    "parental leave and family support",
    "weekly team events and free lunch",
];

pub const SPECIAL_WORDS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];

/// Structural words of job, profile, prompt and explanation text.
const FIXED_WORDS: [&str; 36] = [
    ";",
    ":",
    "required",
    "preferred",
    "job",
    "profile",
    "none",
    "need",
    "have",
    "met",
    "partial",
    "missing",
    "fit",
    "low",
    "medium",
    "high",
    "rating",
    "task",
    "assess",
    "member",
    "extract",
    "list",
    "requirements",
    "evaluate",
    "compare",
    "years",
    "reason",
    "one",
    "line",
    "per",
    "requirement",
    "output",
    "end",
    "with",
    "label",
    "only",
];

/// Closed word-level vocabulary. Ids 0..4 are the specials.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut words: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        let mut add = |w: &str, words: &mut Vec<String>| {
            if !index.contains_key(w) {
                index.insert(w.to_string(), words.len() as u32);
                words.push(w.to_string());
            }
        };
        for w in SPECIAL_WORDS {
            add(w, &mut words);
        }
        for y in 0..=MAX_YEARS {
            add(&y.to_string(), &mut words);
        }
        for w in SKILL_NAMES.iter().chain(FIXED_WORDS.iter()) {
            add(w, &mut words);
        }
        for t in NOISE_TEMPLATES {
            for w in t.split_whitespace() {
                add(w, &mut words);
            }
        }
        debug_assert_eq!(index["<pad>"], PAD);
        debug_assert_eq!(index["<bos>"], BOS);
        debug_assert_eq!(index["<eos>"], EOS);
        debug_assert_eq!(index["<sep>"], SEP);
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<u32> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn word(&self, id: u32) -> Result<&str> {
        self.words
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfVocab {
                token: id,
                vocab_size: self.words.len(),
            })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Whitespace tokenization of lowercase text.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| self.id(&w.to_lowercase()))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids.iter().map(|&i| self.word(i)).collect();
        Ok(words?.join(" "))
    }

    pub fn skill_id(&self, skill: usize) -> u32 {
        self.index[SKILL_NAMES[skill]]
    }

    pub fn years_id(&self, years: u32) -> u32 {
        SPECIAL_WORDS.len() as u32 + years.min(MAX_YEARS)
    }

    /// Skill index of a token, if it names a catalog skill.
    pub fn skill_of(&self, id: u32) -> Option<usize> {
        let w = self.words.get(id as usize)?;
        SKILL_NAMES.iter().position(|s| s == w)
    }

    /// Year count of a token, if it is a number word.
    pub fn years_of(&self, id: u32) -> Option<u32> {
        let w = self.words.get(id as usize)?;
        w.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_and_size() {
        let v = Vocabulary::new();
        assert_eq!(v.id("<pad>").unwrap(), 0);
        assert_eq!(v.id("<sep>").unwrap(), 3);
        assert!(v.len() <= 128, "vocab has {} words", v.len());
        assert_eq!(v.years_id(7), v.id("7").unwrap());
    }

    #[test]
    fn round_trip() {
        let v = Vocabulary::new();
        let text = "required 3 python ; we offer free lunch every day ;";
        let ids = v.encode(text).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), text);
        assert!(matches!(v.encode("blockchain"), Err(Error::UnknownWord(_))));
    }

    #[test]
    fn noise_never_starts_like_a_requirement() {
        for t in NOISE_TEMPLATES {
            let first = t.split_whitespace().next().unwrap();
            assert!(first != "required" && first != "preferred");
            assert!(t
                .split_whitespace()
                .all(|w| !SKILL_NAMES.contains(&w) && w.parse::<u32>().is_err()));
        }
    }
}
