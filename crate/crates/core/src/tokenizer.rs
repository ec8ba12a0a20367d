//! Whitespace/lowercase vocabulary and bounded token sequences.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// The surface tokenisation shared by the vocabulary and the SARI metric:
/// whitespace split, lowercased, punctuation left attached.
pub fn surface_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token ids framed by BOS/EOS, at most `max_len` long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub truncated: bool,
}

/// Bijection between surface tokens and ids. Ids 0-3 are `<pad>`, `<s>`,
/// `</s>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub const PAD_ID: TokenId = 0;
    pub const BOS_ID: TokenId = 1;
    pub const EOS_ID: TokenId = 2;
    pub const UNK_ID: TokenId = 3;

    /// Ranks tokens by frequency (descending, then lexicographic) and keeps
    /// those seen at least `min_freq` times, up to `max_size` entries
    /// including the four specials.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize, min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Vocab("cannot build a vocabulary from an empty corpus".into()));
        }
        if max_size < SPECIALS.len() + 1 {
            return Err(Error::Vocab(format!("max_size {max_size} is below the minimum of 5")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for tok in surface_tokens(line.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());

        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Builds from an id-ordered token list whose first four entries are the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Vocab(format!("the first four tokens must be {SPECIALS:?}")));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("token {i} is empty or contains whitespace")));
            }
            if token_to_id.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token: tokens,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn pad_id(&self) -> TokenId {
        Self::PAD_ID
    }

    pub fn bos_id(&self) -> TokenId {
        Self::BOS_ID
    }

    pub fn eos_id(&self) -> TokenId {
        Self::EOS_ID
    }

    pub fn unk_id(&self) -> TokenId {
        Self::UNK_ID
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// Lowercases, splits on whitespace and frames with BOS/EOS. Content is
    /// cut from the right when the framed sequence would exceed `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        let room = max_len.saturating_sub(2);
        let mut ids = vec![Self::BOS_ID];
        let mut truncated = false;
        for tok in surface_tokens(text) {
            if ids.len() - 1 == room {
                truncated = true;
                break;
            }
            let id = match self.id(&tok) {
                Some(id) if !Self::is_special(id) => id,
                _ => Self::UNK_ID,
            };
            ids.push(id);
        }
        ids.push(Self::EOS_ID);
        TokenSequence { ids, truncated }
    }

    /// Joins content tokens with single spaces, stopping at the first EOS.
    /// Special tokens are never emitted.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut words: Vec<&str> = Vec::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::Vocab(format!("id {id} out of range for vocabulary of {}", self.size())))?;
            if id == Self::EOS_ID {
                break;
            }
            if !Self::is_special(id) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
