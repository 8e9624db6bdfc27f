use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LcmError, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token/id table with ids 0 (padding) and 1 (unknown) reserved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    min_freq: usize,
}

impl Vocab {
    /// Builds a table from tokens already in id order (ids start at 2).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>, min_freq: usize) -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(tokens).collect();
        let index = tokens.iter().enumerate().skip(2).map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index, min_freq }
    }

    /// Size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw: Vocab = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::from_tokens(raw.tokens.into_iter().skip(RESERVED.len()), raw.min_freq))
    }
}

/// Counts lowercased whitespace tokens, keeps those with frequency at least
/// `min_freq`, orders them by descending frequency then lexicographically,
/// and keeps at most `max_size` of them (reserved ids not counted).
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: usize, max_size: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(LcmError::EmptyInput("vocabulary corpus".into()));
    }
    if min_freq == 0 || max_size == 0 {
        return Err(invalid("min_freq and max_size must be positive"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for tok in tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_size);
    Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _)| t), min_freq))
}
