//! Subword tokenization with character-offset mapping, pre-tagged text
//! ingestion (CoNLL-U and JSONL), a baseline heuristic tagger, and the
//! alignment of word-level POS tags onto subword tokens.

mod align;
mod conllu;
mod encode;
mod lexicon;
mod vocab;
mod wordpiece;

pub use align::{align_tags, AlignError, TaggedWord};
pub use conllu::{ingest_conllu, ConlluError, TaggedSentence};
pub use encode::{encode_batch, encode_single, EncodeError, TokenizedSequence};
pub use lexicon::{Lexicon, LexiconError};
pub use vocab::{Vocab, VocabError};
pub use wordpiece::{split_words, tokenize_with_offsets, RawToken, TokenizeError};

use serde::Deserialize;

/// Tags every whitespace word of a sentence with the baseline tagger and
/// records its character span.
pub fn tag_sentence(lexicon: &Lexicon, sentence: &str) -> Vec<TaggedWord> {
    split_words(sentence)
        .into_iter()
        .map(|(word, start)| {
            let end = start + word.chars().count();
            let pos = lexicon.tag_word(word);
            TaggedWord {
                text: word.to_string(),
                span: (start, end),
                pos,
            }
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: words ({words}) and tags ({tags}) differ in length")]
    LengthMismatch {
        line: usize,
        words: usize,
        tags: usize,
    },
    #[error("line {line}: {source}")]
    Tag {
        line: usize,
        source: crate::pos::ParseTagError,
    },
}

#[derive(Deserialize)]
struct JsonlSentence {
    words: Vec<String>,
    tags: Vec<String>,
}

/// Reads pre-tagged sentences from JSONL: one object per line with `words`
/// and `tags` arrays. The sentence text is the words joined by spaces.
pub fn ingest_jsonl(text: &str) -> Result<Vec<TaggedSentence>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlSentence =
            serde_json::from_str(line).map_err(|source| JsonlError::Json {
                line: line_no,
                source,
            })?;
        if parsed.words.len() != parsed.tags.len() {
            return Err(JsonlError::LengthMismatch {
                line: line_no,
                words: parsed.words.len(),
                tags: parsed.tags.len(),
            });
        }
        let mut words = Vec::with_capacity(parsed.words.len());
        let mut cursor = 0usize;
        for (word, tag) in parsed.words.iter().zip(&parsed.tags) {
            let pos = tag
                .parse()
                .map_err(|source| JsonlError::Tag {
                    line: line_no,
                    source,
                })?;
            let len = word.chars().count();
            words.push(TaggedWord {
                text: word.clone(),
                span: (cursor, cursor + len),
                pos,
            });
            cursor += len + 1;
        }
        out.push(TaggedSentence {
            text: parsed.words.join(" "),
            words,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pos::PosTag;

    #[test]
    fn jsonl_round_trip_spans() {
        let text = r#"{"words":["the","cat"],"tags":["DET","NOUN"]}"#;
        let sentences = ingest_jsonl(text).unwrap();
        assert_eq!(sentences.len(), 1);
        let s = &sentences[0];
        assert_eq!(s.text, "the cat");
        assert_eq!(s.words[0].span, (0, 3));
        assert_eq!(s.words[1].span, (4, 7));
        assert_eq!(s.words[1].pos, PosTag::NOUN);
    }

    #[test]
    fn jsonl_rejects_mismatched_lengths_and_bad_tags() {
        assert!(matches!(
            ingest_jsonl(r#"{"words":["a"],"tags":[]}"#),
            Err(JsonlError::LengthMismatch { line: 1, .. })
        ));
        assert!(matches!(
            ingest_jsonl(r#"{"words":["a"],"tags":["WAT"]}"#),
            Err(JsonlError::Tag { line: 1, .. })
        ));
    }
}
