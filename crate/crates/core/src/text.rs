//! Raw text to tokens, vocabularies, padded id sequences and bag-of-words
//! counts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_CAP_BYTES: usize = 150;
pub const DEFAULT_MAX_LEN: usize = 40;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

/// Longest prefix of `text` that fits in `cap` bytes and ends on a char
/// boundary.
pub fn cap_text(text: &str, cap: usize) -> &str {
    if text.len() <= cap {
        return text;
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct Vocabulary {
    min_freq: usize,
    /// Non-reserved tokens; token `tokens[i]` has id `i + 2`.
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.min_freq == other.min_freq && self.tokens == other.tokens
    }
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    min_freq: usize,
    tokens: Vec<String>,
}

impl From<Vocabulary> for RawVocabulary {
    fn from(v: Vocabulary) -> Self {
        RawVocabulary {
            min_freq: v.min_freq,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<RawVocabulary> for Vocabulary {
    type Error = Error;

    fn try_from(raw: RawVocabulary) -> Result<Self> {
        Vocabulary::from_tokens(raw.min_freq, raw.tokens)
    }
}

impl Vocabulary {
    pub fn from_tokens(min_freq: usize, tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if RESERVED.contains(&t.as_str()) {
                return Err(Error::Format(format!("reserved token {t:?} in vocabulary")));
            }
            if index.insert(t.clone(), i + RESERVED.len()).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            min_freq,
            tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED.len()
    }

    /// Always false: PAD and UNK are always present.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD_ID | UNK_ID => Some(RESERVED[id]),
            _ => self.tokens.get(id - RESERVED.len()).map(String::as_str),
        }
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.min_freq.to_le_bytes());
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Keeps tokens seen at least `min_freq` times, ordered by descending
/// frequency and then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::Contract("min_freq must be >= 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(min_freq, kept.into_iter().map(|(t, _)| t.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Checks left-aligned packing and PAD at masked positions.
    pub fn is_well_formed(&self) -> bool {
        self.ids.len() == self.mask.len()
            && self.true_length <= self.ids.len()
            && self
                .mask
                .iter()
                .enumerate()
                .all(|(t, &m)| m == (t < self.true_length))
            && self.ids[self.true_length..].iter().all(|&id| id == PAD_ID)
    }
}

pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 1, "max_len must be >= 1");
    let true_length = tokens.len().min(max_len);
    let mut ids = vec![PAD_ID; max_len];
    for (slot, t) in ids.iter_mut().zip(tokens) {
        *slot = vocab.id(t.as_ref());
    }
    TokenSequence {
        ids,
        mask: (0..max_len).map(|t| t < true_length).collect(),
        true_length,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowVector {
    pub counts: Vec<u32>,
}

impl BowVector {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

pub fn bow_features<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> BowVector {
    let mut counts = vec![0u32; vocab.len()];
    for t in tokens {
        counts[vocab.id(t.as_ref())] += 1;
    }
    BowVector { counts }
}

/// Text preprocessing settings shared by every model kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub cap_bytes: usize,
    pub max_len: usize,
    pub min_freq: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            cap_bytes: DEFAULT_CAP_BYTES,
            max_len: DEFAULT_MAX_LEN,
            min_freq: 1,
        }
    }
}

impl TextConfig {
    pub fn tokens(&self, text: &str) -> Vec<String> {
        tokenize(cap_text(text, self.cap_bytes))
    }
}
