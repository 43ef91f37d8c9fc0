//! Tokenization and the closed vocabulary shared by the language models and
//! the counter-narrative classifier.
//!
//! Tokens are lowercase. Words are maximal runs of alphanumerics (with inner
//! apostrophes and hyphens), every other non-whitespace character is a token of
//! its own, and bracketed markers such as `[CLS]` survive as single tokens.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Index of a token in a [`Vocabulary`].
pub type TokenId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("vocabulary is missing reserved token {0}")]
    MissingReserved(&'static str),
    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),
}

/// Splits text into lowercase tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '[' {
            if let Some(len) = bracket_marker_len(&chars[i..]) {
                out.push(chars[i..i + len].iter().collect::<String>().to_lowercase());
                i += len;
                continue;
            }
        }
        if c.is_alphanumeric() {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let joiner = (d == '\'' || d == '’' || d == '-')
                    && i + 1 < chars.len()
                    && chars[i + 1].is_alphanumeric();
                if d.is_alphanumeric() || joiner {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(chars[start..i].iter().collect::<String>().to_lowercase());
            continue;
        }
        out.push(c.to_string());
        i += 1;
    }
    out
}

// `[CLS]`, `[SEP]` and friends: uppercase letters only, at most 8 of them.
fn bracket_marker_len(chars: &[char]) -> Option<usize> {
    let close = chars.iter().take(10).position(|&c| c == ']')?;
    let inner = &chars[1..close];
    if !inner.is_empty() && inner.iter().all(|c| c.is_ascii_uppercase()) {
        Some(close + 1)
    } else {
        None
    }
}

/// Joins tokens back into readable text, attaching punctuation to the
/// preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        let attach = matches!(tok, "." | "," | "!" | "?" | ";" | ":" | ")" | "%" | "'s");
        if !out.is_empty() && !attach && !out.ends_with('(') {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Ordered token list with a bijective token/index mapping. Indices 0, 1, 2 are
/// always `<bos>`, `<eos>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const BOS_ID: TokenId = 0;
    pub const EOS_ID: TokenId = 1;
    pub const UNK_ID: TokenId = 2;

    /// Builds a closed vocabulary from the tokens of `texts` seen at least
    /// `min_count` times. Regular tokens are ordered lexicographically.
    pub fn build<I, S>(texts: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let regular = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_count.max(1) && !is_reserved(tok))
            .map(|(tok, _)| tok);
        let tokens: Vec<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).chain(regular).collect();
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        for (want, id) in [(BOS, Self::BOS_ID), (EOS, Self::EOS_ID), (UNK, Self::UNK_ID)] {
            if tokens.get(id).map(String::as_str) != Some(want) {
                return Err(TextError::MissingReserved(want));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TextError::DuplicateToken(t.clone()));
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

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Result<&str, TextError> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(TextError::IdOutOfRange { id, size: self.len() })
    }

    /// Tokenizes and maps to ids; out-of-vocabulary tokens become `<unk>`.
    pub fn encode(&self, text: &str) -> TokenSeq {
        TokenSeq(
            tokenize(text)
                .iter()
                .map(|t| self.id(t).unwrap_or(Self::UNK_ID))
                .collect(),
        )
    }

    /// Renders ids as text, stopping at the first `<eos>` and dropping the
    /// other reserved tokens.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        let words: Vec<&str> = seq
            .ids()
            .iter()
            .take_while(|&&id| id != Self::EOS_ID)
            .filter(|&&id| id != Self::BOS_ID && id != Self::UNK_ID)
            .filter_map(|&id| self.tokens.get(id).map(String::as_str))
            .collect();
        detokenize(&words)
    }

    pub fn check(&self, seq: &TokenSeq) -> Result<(), TextError> {
        match seq.ids().iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(TextError::IdOutOfRange { id, size: self.len() }),
            None => Ok(()),
        }
    }
}

fn is_reserved(tok: &str) -> bool {
    matches!(tok, BOS | EOS | UNK)
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = TextError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// A discrete token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `<bos>` followed by this sequence.
    pub fn with_bos(&self) -> TokenSeq {
        let mut ids = Vec::with_capacity(self.len() + 1);
        ids.push(Vocabulary::BOS_ID);
        ids.extend_from_slice(&self.0);
        TokenSeq(ids)
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut ids = self.0.clone();
        ids.extend_from_slice(&other.0);
        TokenSeq(ids)
    }

    pub fn reversed(&self) -> TokenSeq {
        TokenSeq(self.0.iter().rev().copied().collect())
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}
