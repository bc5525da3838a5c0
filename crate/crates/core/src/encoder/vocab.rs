use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const UNK: u32 = 2;

const RESERVED: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Lowercased whitespace tokens of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token ids of one sequence; position 0 is `CLS` for encoder input.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenIds(Vec<u32>);

impl TokenIds {
    /// Wraps raw ids, which must start with `CLS`.
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.first() != Some(&CLS) {
            return Err(Error::Data("token sequence must start with CLS".into()));
        }
        Ok(Self(ids))
    }

    /// `CLS` followed by `content`.
    pub fn with_cls(content: &[u32]) -> Self {
        let mut ids = Vec::with_capacity(content.len() + 1);
        ids.push(CLS);
        ids.extend_from_slice(content);
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    /// Tokens after the leading `CLS`.
    pub fn content(&self) -> &[u32] {
        &self.0[1..]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Frequency-ranked vocabulary (ties broken lexicographically), truncated
    /// to `max_size` entries including the three reserved ids.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize, min_freq: usize) -> Result<Self> {
        if corpus.iter().all(|l| l.as_ref().trim().is_empty()) {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        if max_size <= RESERVED.len() {
            return Err(Error::Config(format!("vocab_size must exceed 3, got {max_size}")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for w in words(line.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !RESERVED.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED.len());
        Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(w, _)| w))
                .collect(),
        )
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Data("vocabulary must begin with [PAD], [CLS], [UNK]".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercase, split on whitespace, map unknown words to `UNK`, prepend
    /// `CLS` and truncate to `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenIds> {
        if max_len < 2 {
            return Err(Error::Config(format!("max_len must be at least 2, got {max_len}")));
        }
        if text.trim().is_empty() {
            return Err(Error::Data("cannot tokenize blank text".into()));
        }
        let mut ids = vec![CLS];
        ids.extend(words(text).take(max_len - 1).map(|w| self.id(&w)));
        Ok(TokenIds(ids))
    }

    /// One token per line; the line index is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
