//! Dataset ingestion: `sentence<TAB>label` TSV (SST-2 export convention,
//! optional header) tagged with the baseline tagger and batch-encoded.

use thiserror::Error;

use crate::tokenize::{
    encode_single, tag_sentence, tokenize_with_offsets, EncodeError, Lexicon, TokenizedSequence,
    Vocab,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected `sentence<TAB>label`")]
    Malformed { line: usize },
    #[error("line {line}: label `{text}` is not a nonnegative integer")]
    BadLabel { line: usize, text: String },
    #[error("dataset has no sentences")]
    Empty,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub text: String,
    pub label: usize,
}

/// An encoded training/evaluation example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub sequence: TokenizedSequence,
    pub label: usize,
}

/// Parses TSV `sentence<TAB>label` lines. A leading `sentence\tlabel`
/// header row is tolerated and skipped.
pub fn load_tsv(text: &str) -> Result<Vec<LabeledSentence>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let (sentence, label) = line
            .split_once('\t')
            .ok_or(DataError::Malformed { line: line_no })?;
        if line_no == 1 && sentence == "sentence" && label == "label" {
            continue;
        }
        let label: usize = label.trim().parse().map_err(|_| DataError::BadLabel {
            line: line_no,
            text: label.trim().to_string(),
        })?;
        out.push(LabeledSentence {
            text: sentence.to_string(),
            label,
        });
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

/// Tags and encodes a labeled dataset. Sequences are padded to the longest
/// live length in the dataset, capped at `max_len_cap`; padding a 10-token
/// sentence out to 128 positions would only burn compute. Returns the
/// examples and the uniform length actually used.
pub fn prepare_dataset(
    vocab: &Vocab,
    lexicon: &Lexicon,
    sentences: &[LabeledSentence],
    max_len_cap: usize,
) -> Result<(Vec<Example>, usize), DataError> {
    if sentences.is_empty() {
        return Err(DataError::Empty);
    }
    let mut longest = 3usize;
    for s in sentences {
        let tokens = tokenize_with_offsets(vocab, &s.text).map_err(EncodeError::from)?;
        longest = longest.max(tokens.len() + 2);
    }
    let target_len = longest.min(max_len_cap);

    let mut examples = Vec::with_capacity(sentences.len());
    for s in sentences {
        let words = tag_sentence(lexicon, &s.text);
        let sequence = encode_single(vocab, &s.text, &words, target_len)?;
        examples.push(Example {
            sequence,
            label: s.label,
        });
    }
    Ok((examples, target_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_tsv_with_and_without_header() {
        let with = load_tsv("sentence\tlabel\nthe cat sat\t1\nbad film\t0\n").unwrap();
        assert_eq!(with.len(), 2);
        assert_eq!(with[0].label, 1);
        let without = load_tsv("the cat sat\t1\n").unwrap();
        assert_eq!(without.len(), 1);
        assert_eq!(without[0].text, "the cat sat");
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(matches!(
            load_tsv("no tab here\n"),
            Err(DataError::Malformed { line: 1 })
        ));
        assert!(matches!(
            load_tsv("text\ttwo\n"),
            Err(DataError::BadLabel { line: 1, .. })
        ));
        assert!(matches!(load_tsv(""), Err(DataError::Empty)));
    }

    #[test]
    fn prepare_pads_to_longest_live_length() {
        let vocab =
            Vocab::from_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\nthe\ncat\nsat\ndown\n").unwrap();
        let lexicon = Lexicon::from_text("the\tDET\ncat\tNOUN\nsat\tVERB\ndown\tADV\n").unwrap();
        let sentences = vec![
            LabeledSentence {
                text: "the cat".into(),
                label: 1,
            },
            LabeledSentence {
                text: "the cat sat down".into(),
                label: 0,
            },
        ];
        let (examples, used) = prepare_dataset(&vocab, &lexicon, &sentences, 128).unwrap();
        assert_eq!(used, 6); // CLS + 4 tokens + SEP
        assert!(examples.iter().all(|e| e.sequence.len() == 6));
        assert_eq!(examples[0].sequence.pad_len, 2);
        assert_eq!(examples[1].sequence.pad_len, 0);
    }
}
