//! Offset-based alignment of word-level POS tags onto subword tokens.

use thiserror::Error;

use super::wordpiece::RawToken;
use crate::pos::PosTag;

/// A word with its character span and word-level POS tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedWord {
    pub text: String,
    pub span: (usize, usize),
    pub pos: PosTag,
}

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("token at character offset {offset} falls inside no tagged word span")]
    NoWordForOffset { offset: usize },
}

/// Assigns each token the tag of the tagged word whose span contains the
/// token's span start. Tokens produced by tokenizing the same sentence the
/// words were tagged on always align; an `[UNK]` standing in for an OOV
/// word has the word's span, so it inherits the word's tag.
pub fn align_tags(tokens: &[RawToken], words: &[TaggedWord]) -> Result<Vec<PosTag>, AlignError> {
    let mut tags = Vec::with_capacity(tokens.len());
    let mut word_idx = 0usize;
    for token in tokens {
        let start = token.span.0;
        while word_idx < words.len() && words[word_idx].span.1 <= start {
            word_idx += 1;
        }
        // Spans are strictly increasing, but a token from earlier text may
        // follow after backtracking is impossible; rescan defensively only
        // when the cursor overshot.
        let containing = if word_idx < words.len()
            && words[word_idx].span.0 <= start
            && start < words[word_idx].span.1
        {
            Some(&words[word_idx])
        } else {
            words
                .iter()
                .find(|w| w.span.0 <= start && start < w.span.1)
        };
        match containing {
            Some(word) => tags.push(word.pos),
            None => return Err(AlignError::NoWordForOffset { offset: start }),
        }
    }
    Ok(tags)
}
