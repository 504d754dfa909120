//! Closed-vocabulary tokenizer: lowercase, split on whitespace and
//! punctuation, with bracketed special tokens kept intact.

use crate::dataset::TemplateBank;
use std::collections::HashMap;

/// Id 0 is padding, id 1 is the unknown-word bucket; every other id maps
/// to one vocabulary word.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

impl Tokenizer {
    pub fn from_words(words: &[String]) -> Self {
        let mut all = vec!["[pad]".to_string(), "[unk]".to_string()];
        for w in words {
            if !all.contains(w) {
                all.push(w.clone());
            }
        }
        let index = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words: all, index }
    }

    /// Vocabulary drawn from the expression template bank.
    pub fn for_bank(bank: &TemplateBank) -> Self {
        Self::from_words(&bank.vocabulary())
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Splits into lowercase word tokens. Bracketed special tokens
    /// ("[masked]", "[nocat]") pass through whole; anything else is split
    /// at non-alphanumeric characters. Unknown words map to [`UNK_ID`].
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for chunk in text.split_whitespace() {
            let lower = chunk.to_lowercase();
            if lower.starts_with('[') {
                if let Some(&id) = self.index.get(lower.trim_end_matches(|c: char| {
                    !c.is_alphanumeric() && c != ']' && c != '['
                })) {
                    ids.push(id);
                    continue;
                }
            }
            for word in lower.split(|c: char| !c.is_alphanumeric()) {
                if word.is_empty() {
                    continue;
                }
                ids.push(*self.index.get(word).unwrap_or(&UNK_ID));
            }
        }
        ids
    }
}
