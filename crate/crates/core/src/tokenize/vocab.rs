//! Subword vocabulary: one token per line, line number = id.

use std::collections::HashMap;

use thiserror::Error;

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("duplicate token `{0}`")]
    Duplicate(String),
    #[error("reserved token {0} missing from vocabulary")]
    MissingReserved(&'static str),
}

/// Ordered subword vocabulary. Continuation pieces carry a `##` prefix.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    cls: u32,
    sep: u32,
    pad: u32,
    unk: u32,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(VocabError::Duplicate(token.clone()));
            }
        }
        let lookup = |name: &'static str| -> Result<u32, VocabError> {
            index
                .get(name)
                .copied()
                .ok_or(VocabError::MissingReserved(name))
        };
        let cls = lookup(CLS_TOKEN)?;
        let sep = lookup(SEP_TOKEN)?;
        let pad = lookup(PAD_TOKEN)?;
        let unk = lookup(UNK_TOKEN)?;
        Ok(Vocab {
            tokens,
            index,
            cls,
            sep,
            pad,
            unk,
        })
    }

    /// Parses the vocab file format: one token per line, id = line number.
    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        Self::from_tokens(text.lines().map(|l| l.trim_end()).filter(|l| !l.is_empty()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }
}
