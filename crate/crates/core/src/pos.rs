//! POS tag vocabulary and the grammatical rule system.
//!
//! A [`RuleSet`] holds two directed (query tag, key tag) pair sets: hard
//! pairs define which attention connections are allowed at all, soft pairs
//! receive a positive additive bias `alpha`. A pair present in both sets
//! behaves as hard (always allowed, bias 0).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Universal Dependencies tag inventory plus the special-token tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PosTag {
    ADJ,
    ADP,
    ADV,
    AUX,
    CCONJ,
    DET,
    INTJ,
    NOUN,
    NUM,
    PART,
    PRON,
    PROPN,
    PUNCT,
    SCONJ,
    SYM,
    VERB,
    X,
    /// Tag of the sequence-initial classification token.
    CLS,
    /// Tag of the sequence terminator token.
    SEP,
    /// Tag of padding positions.
    PAD,
    /// Tag of an unknown-token placeholder with no parent word.
    UNK,
}

impl PosTag {
    /// Every tag, UD inventory first, then the special-token tags.
    pub const ALL: [PosTag; 21] = [
        PosTag::ADJ,
        PosTag::ADP,
        PosTag::ADV,
        PosTag::AUX,
        PosTag::CCONJ,
        PosTag::DET,
        PosTag::INTJ,
        PosTag::NOUN,
        PosTag::NUM,
        PosTag::PART,
        PosTag::PRON,
        PosTag::PROPN,
        PosTag::PUNCT,
        PosTag::SCONJ,
        PosTag::SYM,
        PosTag::VERB,
        PosTag::X,
        PosTag::CLS,
        PosTag::SEP,
        PosTag::PAD,
        PosTag::UNK,
    ];

    /// The 17 Universal Dependencies word tags (no special-token tags).
    pub const UD: [PosTag; 17] = [
        PosTag::ADJ,
        PosTag::ADP,
        PosTag::ADV,
        PosTag::AUX,
        PosTag::CCONJ,
        PosTag::DET,
        PosTag::INTJ,
        PosTag::NOUN,
        PosTag::NUM,
        PosTag::PART,
        PosTag::PRON,
        PosTag::PROPN,
        PosTag::PUNCT,
        PosTag::SCONJ,
        PosTag::SYM,
        PosTag::VERB,
        PosTag::X,
    ];

    pub fn is_special(self) -> bool {
        matches!(self, PosTag::CLS | PosTag::SEP | PosTag::PAD | PosTag::UNK)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::ADJ => "ADJ",
            PosTag::ADP => "ADP",
            PosTag::ADV => "ADV",
            PosTag::AUX => "AUX",
            PosTag::CCONJ => "CCONJ",
            PosTag::DET => "DET",
            PosTag::INTJ => "INTJ",
            PosTag::NOUN => "NOUN",
            PosTag::NUM => "NUM",
            PosTag::PART => "PART",
            PosTag::PRON => "PRON",
            PosTag::PROPN => "PROPN",
            PosTag::PUNCT => "PUNCT",
            PosTag::SCONJ => "SCONJ",
            PosTag::SYM => "SYM",
            PosTag::VERB => "VERB",
            PosTag::X => "X",
            PosTag::CLS => "CLS",
            PosTag::SEP => "SEP",
            PosTag::PAD => "PAD",
            PosTag::UNK => "UNK",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown POS tag `{0}`")]
pub struct ParseTagError(pub String);

impl FromStr for PosTag {
    type Err = ParseTagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PosTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ParseTagError(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("alpha must be nonnegative, got {0}")]
    NegativeAlpha(f64),
}

/// Directed grammatical attention rules.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    hard_pairs: BTreeSet<(PosTag, PosTag)>,
    soft_pairs: BTreeSet<(PosTag, PosTag)>,
    alpha: f64,
    cls_attends_all: bool,
    self_always_allowed: bool,
}

pub const DEFAULT_ALPHA: f64 = 5.0;

impl RuleSet {
    pub fn new(
        hard_pairs: BTreeSet<(PosTag, PosTag)>,
        soft_pairs: BTreeSet<(PosTag, PosTag)>,
        alpha: f64,
        cls_attends_all: bool,
        self_always_allowed: bool,
    ) -> Result<Self, RuleError> {
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(RuleError::NegativeAlpha(alpha));
        }
        Ok(RuleSet {
            hard_pairs,
            soft_pairs,
            alpha,
            cls_attends_all,
            self_always_allowed,
        })
    }

    /// No pairs at all: only the self/CLS exceptions survive hard masking.
    pub fn empty() -> Self {
        RuleSet {
            hard_pairs: BTreeSet::new(),
            soft_pairs: BTreeSet::new(),
            alpha: DEFAULT_ALPHA,
            cls_attends_all: true,
            self_always_allowed: true,
        }
    }

    /// Every (tag, tag) pair hard-allowed; masks built from this are all-zero.
    pub fn all_allowed() -> Self {
        let mut hard = BTreeSet::new();
        for q in PosTag::ALL {
            for k in PosTag::ALL {
                hard.insert((q, k));
            }
        }
        RuleSet {
            hard_pairs: hard,
            soft_pairs: BTreeSet::new(),
            alpha: DEFAULT_ALPHA,
            cls_attends_all: true,
            self_always_allowed: true,
        }
    }

    pub fn hard_pairs(&self) -> &BTreeSet<(PosTag, PosTag)> {
        &self.hard_pairs
    }

    pub fn soft_pairs(&self) -> &BTreeSet<(PosTag, PosTag)> {
        &self.soft_pairs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cls_attends_all(&self) -> bool {
        self.cls_attends_all
    }

    pub fn self_always_allowed(&self) -> bool {
        self.self_always_allowed
    }

    /// Pure pair lookup. Positional exceptions (self, CLS) are applied at
    /// mask construction, not here.
    pub fn hard_allowed(&self, query: PosTag, key: PosTag) -> bool {
        self.hard_pairs.contains(&(query, key))
    }

    /// Additive bias for a pair: 0 for hard pairs (always allowed anyway),
    /// `alpha` for soft-only pairs, 0 otherwise.
    pub fn soft_bias(&self, query: PosTag, key: PosTag) -> f64 {
        if self.hard_pairs.contains(&(query, key)) {
            0.0
        } else if self.soft_pairs.contains(&(query, key)) {
            self.alpha
        } else {
            0.0
        }
    }

    /// Parses the rule-file format: `#` comments, `alpha <float>`,
    /// `cls_attends_all <bool>`, `self_always_allowed <bool>` directives and
    /// `hard|soft <TAG> -> <TAG> [<TAG>...]` rule lines.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut hard = BTreeSet::new();
        let mut soft = BTreeSet::new();
        let mut alpha = DEFAULT_ALPHA;
        let mut cls_attends_all = true;
        let mut self_always_allowed = true;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let keyword = fields.next().expect("nonempty line");
            match keyword {
                "alpha" => {
                    let value = fields.next().ok_or_else(|| RuleError::Parse {
                        line: line_no,
                        msg: "alpha requires a value".into(),
                    })?;
                    let parsed: f64 = value.parse().map_err(|_| RuleError::Parse {
                        line: line_no,
                        msg: format!("invalid alpha value `{value}`"),
                    })?;
                    if parsed < 0.0 || !parsed.is_finite() {
                        return Err(RuleError::Parse {
                            line: line_no,
                            msg: format!("alpha must be nonnegative, got {parsed}"),
                        });
                    }
                    alpha = parsed;
                }
                "cls_attends_all" | "self_always_allowed" => {
                    let value = fields.next().ok_or_else(|| RuleError::Parse {
                        line: line_no,
                        msg: format!("{keyword} requires true or false"),
                    })?;
                    let flag = match value {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(RuleError::Parse {
                                line: line_no,
                                msg: format!("expected true or false, got `{other}`"),
                            })
                        }
                    };
                    if keyword == "cls_attends_all" {
                        cls_attends_all = flag;
                    } else {
                        self_always_allowed = flag;
                    }
                }
                "hard" | "soft" => {
                    let query = fields.next().ok_or_else(|| RuleError::Parse {
                        line: line_no,
                        msg: "rule requires a query tag".into(),
                    })?;
                    let query: PosTag = query.parse().map_err(|e: ParseTagError| {
                        RuleError::Parse {
                            line: line_no,
                            msg: e.to_string(),
                        }
                    })?;
                    match fields.next() {
                        Some("->") => {}
                        other => {
                            return Err(RuleError::Parse {
                                line: line_no,
                                msg: format!(
                                    "expected `->` after query tag, got `{}`",
                                    other.unwrap_or("")
                                ),
                            })
                        }
                    }
                    let mut any = false;
                    for key in fields {
                        let key: PosTag = key.parse().map_err(|e: ParseTagError| {
                            RuleError::Parse {
                                line: line_no,
                                msg: e.to_string(),
                            }
                        })?;
                        if keyword == "hard" {
                            hard.insert((query, key));
                        } else {
                            soft.insert((query, key));
                        }
                        any = true;
                    }
                    if !any {
                        return Err(RuleError::Parse {
                            line: line_no,
                            msg: "rule requires at least one key tag".into(),
                        });
                    }
                }
                other => {
                    return Err(RuleError::Parse {
                        line: line_no,
                        msg: format!("unknown directive `{other}`"),
                    })
                }
            }
        }

        RuleSet::new(hard, soft, alpha, cls_attends_all, self_always_allowed)
    }

    /// Inverse of [`RuleSet::parse`]: `parse(serialize(rs)) == rs`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("alpha {}\n", self.alpha));
        out.push_str(&format!("cls_attends_all {}\n", self.cls_attends_all));
        out.push_str(&format!(
            "self_always_allowed {}\n",
            self.self_always_allowed
        ));
        for (label, pairs) in [("hard", &self.hard_pairs), ("soft", &self.soft_pairs)] {
            let mut current: Option<PosTag> = None;
            let mut keys: Vec<PosTag> = Vec::new();
            let flush = |query: Option<PosTag>, keys: &mut Vec<PosTag>, out: &mut String| {
                if let Some(q) = query {
                    out.push_str(&format!("{label} {q} ->"));
                    for k in keys.iter() {
                        out.push_str(&format!(" {k}"));
                    }
                    out.push('\n');
                }
                keys.clear();
            };
            for &(q, k) in pairs.iter() {
                if current != Some(q) {
                    flush(current, &mut keys, &mut out);
                    current = Some(q);
                }
                keys.push(k);
            }
            flush(current, &mut keys, &mut out);
        }
        out
    }

    /// Non-fatal rule-set diagnostics; never mutates the rules.
    pub fn validate(&self) -> Vec<RuleDiagnostic> {
        let mut diags = Vec::new();
        let hard_queries: BTreeSet<PosTag> = self.hard_pairs.iter().map(|&(q, _)| q).collect();
        for tag in PosTag::UD {
            if !hard_queries.contains(&tag) {
                diags.push(RuleDiagnostic::SelfOnlyUnderHard(tag));
            }
        }
        for &(q, k) in self.hard_pairs.intersection(&self.soft_pairs) {
            diags.push(RuleDiagnostic::HardOverridesSoft(q, k));
        }
        if self.alpha == 0.0 && !self.soft_pairs.is_empty() {
            diags.push(RuleDiagnostic::ZeroAlphaWithSoftRules);
        }
        diags
    }
}

/// The built-in rule set: the illustrative hard/soft tables with
/// alpha = 5.0 and both positional exceptions enabled.
impl Default for RuleSet {
    fn default() -> Self {
        use PosTag::*;
        let hard: BTreeSet<(PosTag, PosTag)> = [
            (ADJ, NOUN),
            (ADJ, PROPN),
            (DET, NOUN),
            (DET, PROPN),
            (VERB, NOUN),
            (VERB, PROPN),
            (VERB, PRON),
            (VERB, ADV),
            (ADP, NOUN),
            (ADP, PROPN),
            (ADP, PRON),
        ]
        .into_iter()
        .collect();

        let mut soft: BTreeSet<(PosTag, PosTag)> = [
            (ADV, VERB),
            (ADV, ADJ),
            (ADV, ADV),
            (NOUN, VERB),
            (PROPN, VERB),
            (PRON, VERB),
        ]
        .into_iter()
        .collect();
        for conj in [CCONJ, SCONJ] {
            for target in [NOUN, PROPN, PRON, VERB, ADJ, ADV] {
                soft.insert((conj, target));
            }
        }

        RuleSet {
            hard_pairs: hard,
            soft_pairs: soft,
            alpha: DEFAULT_ALPHA,
            cls_attends_all: true,
            self_always_allowed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleDiagnostic {
    /// Tag never appears as a hard-rule query; its rows are self-only under
    /// hard masking.
    SelfOnlyUnderHard(PosTag),
    /// Pair listed in both sets; the hard classification wins.
    HardOverridesSoft(PosTag, PosTag),
    /// Soft rules present but alpha is zero, so they have no effect.
    ZeroAlphaWithSoftRules,
}

impl fmt::Display for RuleDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleDiagnostic::SelfOnlyUnderHard(tag) => write!(
                f,
                "{tag} has no hard rules as query; rows with this tag are self-only under hard masking"
            ),
            RuleDiagnostic::HardOverridesSoft(q, k) => {
                write!(f, "pair ({q}, {k}) is in both sets; treated as hard")
            }
            RuleDiagnostic::ZeroAlphaWithSoftRules => {
                write!(f, "soft rules present but alpha = 0; soft bias has no effect")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_parse_round_trip_and_closed_set() {
        for tag in PosTag::ALL {
            assert_eq!(tag.as_str().parse::<PosTag>().unwrap(), tag);
        }
        assert!("VERBZ".parse::<PosTag>().is_err());
        assert!("noun".parse::<PosTag>().is_err());
    }

    #[test]
    fn default_rules_match_published_tables() {
        use PosTag::*;
        let rs = RuleSet::default();
        assert!(rs.hard_allowed(DET, NOUN));
        assert!(rs.hard_allowed(ADJ, NOUN));
        assert!(rs.hard_allowed(ADP, PRON));
        assert!(!rs.hard_allowed(NOUN, DET));
        assert!(!rs.hard_allowed(ADV, VERB), "ADV->VERB is soft only");
        assert_eq!(rs.hard_pairs().len(), 11);
        assert_eq!(rs.soft_pairs().len(), 18);
        assert_eq!(rs.alpha(), 5.0);
        assert!(rs.cls_attends_all());
        assert!(rs.self_always_allowed());
    }

    #[test]
    fn soft_bias_hard_precedence() {
        use PosTag::*;
        let rs = RuleSet::default();
        assert_eq!(rs.soft_bias(ADV, VERB), 5.0);
        assert_eq!(rs.soft_bias(ADJ, NOUN), 0.0);
        assert_eq!(rs.soft_bias(PUNCT, NUM), 0.0);

        // Pair in both sets behaves as hard.
        let mut soft = rs.soft_pairs().clone();
        soft.insert((ADJ, NOUN));
        let overlapping = RuleSet::new(rs.hard_pairs().clone(), soft, 5.0, true, true).unwrap();
        assert_eq!(overlapping.soft_bias(ADJ, NOUN), 0.0);
        assert!(overlapping.hard_allowed(ADJ, NOUN));
    }

    #[test]
    fn parse_basic_rules() {
        let rs = RuleSet::parse("hard ADJ -> NOUN PROPN\n").unwrap();
        assert!(rs.hard_allowed(PosTag::ADJ, PosTag::NOUN));
        assert!(rs.hard_allowed(PosTag::ADJ, PosTag::PROPN));
        assert_eq!(rs.alpha(), 5.0);
        assert!(rs.cls_attends_all());
        assert!(rs.self_always_allowed());
    }

    #[test]
    fn parse_empty_body_gives_defaults() {
        let rs = RuleSet::parse("# nothing but comments\n\n").unwrap();
        assert!(rs.hard_pairs().is_empty());
        assert!(rs.soft_pairs().is_empty());
        assert_eq!(rs.alpha(), 5.0);
    }

    #[test]
    fn parse_overlapping_pair_classified_hard() {
        let rs = RuleSet::parse("soft ADJ -> NOUN\nhard ADJ -> NOUN\n").unwrap();
        assert!(rs.hard_allowed(PosTag::ADJ, PosTag::NOUN));
        assert_eq!(rs.soft_bias(PosTag::ADJ, PosTag::NOUN), 0.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = RuleSet::parse("alpha 1.0\nhard ADJ -> WAT\n").unwrap_err();
        match err {
            RuleError::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("WAT"));
            }
            other => panic!("unexpected error {other:?}"),
        }

        assert!(RuleSet::parse("alpha -1\n").is_err());
        assert!(RuleSet::parse("hard ADJ NOUN\n").is_err());
        assert!(RuleSet::parse("bogus line\n").is_err());
    }

    #[test]
    fn serialize_parse_round_trip_default() {
        let rs = RuleSet::default();
        let text = rs.serialize();
        let reparsed = RuleSet::parse(&text).unwrap();
        assert_eq!(rs, reparsed);
    }

    #[test]
    fn validate_default_rules() {
        let rs = RuleSet::default();
        let diags = rs.validate();
        assert!(diags.contains(&RuleDiagnostic::SelfOnlyUnderHard(PosTag::NOUN)));
        assert!(!diags.contains(&RuleDiagnostic::SelfOnlyUnderHard(PosTag::ADJ)));
        // Hard queries are exactly {ADJ, DET, VERB, ADP}.
        let self_only: Vec<_> = diags
            .iter()
            .filter(|d| matches!(d, RuleDiagnostic::SelfOnlyUnderHard(_)))
            .collect();
        assert_eq!(self_only.len(), 17 - 4);
    }

    #[test]
    fn validate_empty_and_zero_alpha() {
        let empty = RuleSet::empty();
        let self_only = empty
            .validate()
            .iter()
            .filter(|d| matches!(d, RuleDiagnostic::SelfOnlyUnderHard(_)))
            .count();
        assert_eq!(self_only, 17);

        let rs = RuleSet::new(
            BTreeSet::new(),
            [(PosTag::ADV, PosTag::VERB)].into_iter().collect(),
            0.0,
            true,
            true,
        )
        .unwrap();
        assert!(rs
            .validate()
            .contains(&RuleDiagnostic::ZeroAlphaWithSoftRules));
    }

    #[test]
    fn negative_alpha_rejected() {
        assert!(RuleSet::new(BTreeSet::new(), BTreeSet::new(), -0.5, true, true).is_err());
    }
}
