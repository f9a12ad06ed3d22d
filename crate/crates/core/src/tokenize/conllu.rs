//! CoNLL-U ingestion: FORM and UPOS columns, sentence spans reconstructed
//! by reassembling forms with single spaces.

use thiserror::Error;

use super::align::TaggedWord;
use crate::pos::PosTag;

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("line {line}: expected at least 4 tab-separated columns")]
    Malformed { line: usize },
    #[error("line {line}: UPOS column is missing or `_`")]
    MissingUpos { line: usize },
    #[error("line {line}: {source}")]
    InvalidTag {
        line: usize,
        source: crate::pos::ParseTagError,
    },
}

/// One ingested sentence: reassembled text plus tagged words with spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub text: String,
    pub words: Vec<TaggedWord>,
}

/// Parses CoNLL-U text into one [`TaggedSentence`] per sentence block.
/// Comment lines are skipped; multiword-token ranges (ids like `1-2`) and
/// empty nodes (ids like `1.1`) are skipped in favor of their parts.
pub fn ingest_conllu(text: &str) -> Result<Vec<TaggedSentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut words: Vec<TaggedWord> = Vec::new();
    let mut pieces: Vec<String> = Vec::new();
    let mut cursor = 0usize;

    let mut flush = |words: &mut Vec<TaggedWord>, pieces: &mut Vec<String>, cursor: &mut usize| {
        if !words.is_empty() {
            sentences.push(TaggedSentence {
                text: pieces.join(" "),
                words: std::mem::take(words),
            });
        }
        pieces.clear();
        *cursor = 0;
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end();
        if line.is_empty() {
            flush(&mut words, &mut pieces, &mut cursor);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(ConlluError::Malformed { line: line_no });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let form = cols[1];
        let upos = cols[3];
        if upos.is_empty() || upos == "_" {
            return Err(ConlluError::MissingUpos { line: line_no });
        }
        let pos: PosTag = upos.parse().map_err(|source| ConlluError::InvalidTag {
            line: line_no,
            source,
        })?;
        let len = form.chars().count();
        words.push(TaggedWord {
            text: form.to_string(),
            span: (cursor, cursor + len),
            pos,
        });
        pieces.push(form.to_string());
        cursor += len + 1;
    }
    flush(&mut words, &mut pieces, &mut cursor);
    Ok(sentences)
}
