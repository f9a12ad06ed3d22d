//! Word → most-frequent-tag lexicon with suffix fallback heuristics, the
//! stand-in for an external statistical tagger.

use std::collections::HashMap;

use thiserror::Error;

use crate::pos::PosTag;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: expected `word<TAB>TAG`")]
    Malformed { line: usize },
    #[error("line {line}: {source}")]
    Tag {
        line: usize,
        source: crate::pos::ParseTagError,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    map: HashMap<String, PosTag>,
}

impl Lexicon {
    pub fn new(map: HashMap<String, PosTag>) -> Self {
        Lexicon { map }
    }

    /// Parses `word<TAB>TAG` lines; `#` lines and blanks are skipped.
    pub fn from_text(text: &str) -> Result<Self, LexiconError> {
        let mut map = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line
                .split_once('\t')
                .ok_or(LexiconError::Malformed { line: line_no })?;
            let tag: PosTag = tag.trim().parse().map_err(|source| LexiconError::Tag {
                line: line_no,
                source,
            })?;
            map.insert(word.to_lowercase(), tag);
        }
        Ok(Lexicon { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Tags one word: exact lowercase lexicon hit, then suffix heuristics,
    /// then NOUN. Total — never fails.
    pub fn tag_word(&self, word: &str) -> PosTag {
        let lower = word.to_lowercase();
        if let Some(&tag) = self.map.get(&lower) {
            return tag;
        }
        if lower.ends_with("ly") {
            return PosTag::ADV;
        }
        if lower.ends_with("ing") || lower.ends_with("ed") {
            return PosTag::VERB;
        }
        if ["ous", "ful", "ive", "able"]
            .iter()
            .any(|s| lower.ends_with(s))
        {
            return PosTag::ADJ;
        }
        if !lower.is_empty() && lower.chars().all(|c| c.is_ascii_digit()) {
            return PosTag::NUM;
        }
        let mut chars = word.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_ascii_punctuation() {
                return PosTag::PUNCT;
            }
        }
        PosTag::NOUN
    }

    pub fn baseline_tag(&self, words: &[&str]) -> Vec<PosTag> {
        words.iter().map(|w| self.tag_word(w)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_hit_beats_heuristics() {
        let lex = Lexicon::from_text("the\tDET\nonly\tADV\nred\tADJ\n").unwrap();
        assert_eq!(lex.tag_word("the"), PosTag::DET);
        assert_eq!(lex.tag_word("The"), PosTag::DET, "lookup is lowercased");
        assert_eq!(lex.tag_word("red"), PosTag::ADJ);
    }

    #[test]
    fn suffix_heuristics_in_order() {
        let lex = Lexicon::default();
        assert_eq!(lex.tag_word("quickly"), PosTag::ADV);
        assert_eq!(lex.tag_word("running"), PosTag::VERB);
        assert_eq!(lex.tag_word("jumped"), PosTag::VERB);
        assert_eq!(lex.tag_word("famous"), PosTag::ADJ);
        assert_eq!(lex.tag_word("hopeful"), PosTag::ADJ);
        assert_eq!(lex.tag_word("attractive"), PosTag::ADJ);
        assert_eq!(lex.tag_word("readable"), PosTag::ADJ);
        assert_eq!(lex.tag_word("1987"), PosTag::NUM);
        assert_eq!(lex.tag_word("!"), PosTag::PUNCT);
    }

    #[test]
    fn fallback_is_noun() {
        let lex = Lexicon::default();
        assert_eq!(lex.tag_word("flibbertigibbet"), PosTag::NOUN);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(matches!(
            Lexicon::from_text("word NOUN\n"),
            Err(LexiconError::Malformed { line: 1 })
        ));
        assert!(matches!(
            Lexicon::from_text("word\tNOPE\n"),
            Err(LexiconError::Tag { line: 1, .. })
        ));
    }
}
