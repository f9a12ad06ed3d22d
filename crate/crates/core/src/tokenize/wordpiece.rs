//! Greedy longest-match subword tokenization over whitespace words,
//! preserving per-token character spans and parent word indices.

use thiserror::Error;

use super::vocab::Vocab;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("sentence is empty after trimming")]
    EmptySentence,
}

/// One subword token before special-token wrapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    pub id: u32,
    /// Character span in the original sentence.
    pub span: (usize, usize),
    /// Index of the whitespace word this token came from.
    pub word_index: usize,
}

/// Splits into whitespace words with their starting character offsets.
pub fn split_words(sentence: &str) -> Vec<(&str, usize)> {
    let mut words = Vec::new();
    let mut start_char = 0usize;
    let mut start_byte = 0usize;
    let mut in_word = false;
    for (char_idx, (byte_idx, ch)) in sentence.char_indices().enumerate() {
        if ch.is_whitespace() {
            if in_word {
                words.push((&sentence[start_byte..byte_idx], start_char));
                in_word = false;
            }
        } else if !in_word {
            start_char = char_idx;
            start_byte = byte_idx;
            in_word = true;
        }
    }
    if in_word {
        words.push((&sentence[start_byte..], start_char));
    }
    words
}

/// Greedy longest-match decomposition of each whitespace word against the
/// vocabulary; continuation pieces are matched with a `##` prefix. A word
/// with no decomposition becomes a single `[UNK]` token spanning the whole
/// word. Deterministic.
pub fn tokenize_with_offsets(
    vocab: &Vocab,
    sentence: &str,
) -> Result<Vec<RawToken>, TokenizeError> {
    let words = split_words(sentence);
    if words.is_empty() {
        return Err(TokenizeError::EmptySentence);
    }

    let mut tokens = Vec::new();
    let mut candidate = String::new();
    for (word_index, (word, word_start)) in words.into_iter().enumerate() {
        let chars: Vec<char> = word.chars().collect();
        let mut pieces: Vec<RawToken> = Vec::new();
        let mut pos = 0usize;
        let mut decomposed = true;
        while pos < chars.len() {
            let mut matched = None;
            for end in (pos + 1..=chars.len()).rev() {
                candidate.clear();
                if pos > 0 {
                    candidate.push_str("##");
                }
                candidate.extend(&chars[pos..end]);
                if let Some(id) = vocab.id(&candidate) {
                    matched = Some((end, id));
                    break;
                }
            }
            match matched {
                Some((end, id)) => {
                    pieces.push(RawToken {
                        id,
                        span: (word_start + pos, word_start + end),
                        word_index,
                    });
                    pos = end;
                }
                None => {
                    decomposed = false;
                    break;
                }
            }
        }
        if decomposed {
            tokens.extend(pieces);
        } else {
            tokens.push(RawToken {
                id: vocab.unk_id(),
                span: (word_start, word_start + chars.len()),
                word_index,
            });
        }
    }
    Ok(tokens)
}
