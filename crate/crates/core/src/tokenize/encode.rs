//! Batch encoding: wrap in [CLS]/[SEP], truncate, pad, and carry aligned
//! per-token POS tags.

use thiserror::Error;

use super::align::{align_tags, AlignError, TaggedWord};
use super::vocab::Vocab;
use super::wordpiece::{tokenize_with_offsets, TokenizeError};
use crate::pos::PosTag;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("max_len must be at least 3, got {0}")]
    MaxLenTooSmall(usize),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// A fully-encoded sequence: `[CLS] tokens… [SEP] [PAD]…`, padded to a
/// uniform length, with one POS tag per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSequence {
    pub ids: Vec<u32>,
    /// Character spans; special tokens get (0, 0).
    pub spans: Vec<(usize, usize)>,
    /// Parent whitespace-word index; none for special tokens.
    pub parent_word: Vec<Option<usize>>,
    pub tags: Vec<PosTag>,
    pub pad_len: usize,
}

impl TokenizedSequence {
    /// Total length including specials and padding.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Length of the live region: everything before the padding.
    pub fn live_len(&self) -> usize {
        self.ids.len() - self.pad_len
    }

    pub fn pad_flags(&self) -> Vec<bool> {
        let live = self.live_len();
        (0..self.len()).map(|i| i >= live).collect()
    }
}

/// Encodes one sentence: tokenize, align tags, wrap, truncate to `max_len`
/// (re-terminating with [SEP]), and pad to exactly `max_len`.
pub fn encode_single(
    vocab: &Vocab,
    sentence: &str,
    words: &[TaggedWord],
    max_len: usize,
) -> Result<TokenizedSequence, EncodeError> {
    if max_len < 3 {
        return Err(EncodeError::MaxLenTooSmall(max_len));
    }
    let tokens = tokenize_with_offsets(vocab, sentence)?;
    let tags = align_tags(&tokens, words)?;

    let keep = tokens.len().min(max_len - 2);
    let live = keep + 2;
    let mut seq = TokenizedSequence {
        ids: Vec::with_capacity(max_len),
        spans: Vec::with_capacity(max_len),
        parent_word: Vec::with_capacity(max_len),
        tags: Vec::with_capacity(max_len),
        pad_len: max_len - live,
    };

    seq.ids.push(vocab.cls_id());
    seq.spans.push((0, 0));
    seq.parent_word.push(None);
    seq.tags.push(PosTag::CLS);
    for (token, tag) in tokens.iter().zip(tags).take(keep) {
        seq.ids.push(token.id);
        seq.spans.push(token.span);
        seq.parent_word.push(Some(token.word_index));
        seq.tags.push(tag);
    }
    seq.ids.push(vocab.sep_id());
    seq.spans.push((0, 0));
    seq.parent_word.push(None);
    seq.tags.push(PosTag::SEP);
    while seq.ids.len() < max_len {
        seq.ids.push(vocab.pad_id());
        seq.spans.push((0, 0));
        seq.parent_word.push(None);
        seq.tags.push(PosTag::PAD);
    }
    Ok(seq)
}

/// Encodes a batch of pre-tagged sentences to a uniform length.
pub fn encode_batch(
    vocab: &Vocab,
    sentences: &[(&str, &[TaggedWord])],
    max_len: usize,
) -> Result<Vec<TokenizedSequence>, EncodeError> {
    sentences
        .iter()
        .map(|(text, words)| encode_single(vocab, text, words, max_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::tag_sentence;
    use crate::tokenize::Lexicon;

    fn test_vocab() -> Vocab {
        Vocab::from_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\nthe\ncat\nsat\nplay\n##ing\n").unwrap()
    }

    fn lexicon() -> Lexicon {
        Lexicon::from_text("the\tDET\ncat\tNOUN\nsat\tVERB\n").unwrap()
    }

    #[test]
    fn wraps_and_pads_to_max_len() {
        let v = test_vocab();
        let words = tag_sentence(&lexicon(), "the cat");
        let seq = encode_single(&v, "the cat", &words, 16).unwrap();
        assert_eq!(seq.len(), 16);
        assert_eq!(seq.live_len(), 4);
        assert_eq!(seq.pad_len, 12);
        assert_eq!(seq.ids[0], v.cls_id());
        assert_eq!(seq.ids[3], v.sep_id());
        assert_eq!(seq.ids[4], v.pad_id());
        assert_eq!(seq.tags[0], PosTag::CLS);
        assert_eq!(seq.tags[1], PosTag::DET);
        assert_eq!(seq.tags[2], PosTag::NOUN);
        assert_eq!(seq.tags[3], PosTag::SEP);
        assert_eq!(seq.tags[15], PosTag::PAD);
        assert_eq!(seq.parent_word[1], Some(0));
        assert_eq!(seq.parent_word[2], Some(1));
        assert_eq!(seq.parent_word[0], None);
    }

    #[test]
    fn truncation_reterminates_with_sep() {
        let v = test_vocab();
        let long = vec!["cat"; 200].join(" ");
        let words = tag_sentence(&lexicon(), &long);
        let seq = encode_single(&v, &long, &words, 128).unwrap();
        assert_eq!(seq.len(), 128);
        assert_eq!(seq.pad_len, 0);
        assert_eq!(seq.ids[127], v.sep_id());
        assert_eq!(seq.tags[127], PosTag::SEP);
        assert_eq!(seq.ids[126], v.id("cat").unwrap());
    }

    #[test]
    fn batch_pads_uniformly() {
        let v = test_vocab();
        let lex = lexicon();
        let w1 = tag_sentence(&lex, "the cat");
        let w2 = tag_sentence(&lex, "the cat sat playing");
        let batch = encode_batch(
            &v,
            &[("the cat", w1.as_slice()), ("the cat sat playing", w2.as_slice())],
            32,
        )
        .unwrap();
        assert_eq!(batch[0].len(), 32);
        assert_eq!(batch[1].len(), 32);
        assert_eq!(batch[0].pad_len, 32 - 4);
        // "playing" splits into two pieces sharing a tag.
        assert_eq!(batch[1].pad_len, 32 - 7);
        assert_eq!(batch[1].tags[4], batch[1].tags[5]);
        assert_eq!(batch[1].parent_word[4], batch[1].parent_word[5]);
    }

    #[test]
    fn max_len_floor() {
        let v = test_vocab();
        let words = tag_sentence(&lexicon(), "the");
        assert!(matches!(
            encode_single(&v, "the", &words, 2),
            Err(EncodeError::MaxLenTooSmall(2))
        ));
    }

    #[test]
    fn deterministic_byte_identical() {
        let v = test_vocab();
        let words = tag_sentence(&lexicon(), "the cat sat");
        let a = encode_single(&v, "the cat sat", &words, 10).unwrap();
        let b = encode_single(&v, "the cat sat", &words, 10).unwrap();
        assert_eq!(a, b);
    }
}
