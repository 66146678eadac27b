//! Number-entity-annotated text: the data model shared by every task.
//!
//! A [`Sentence`] is a word-tokenized context with one [`EntityLabel`] per
//! token, optionally carrying a question with an answer span (span QA) and a
//! masked numeral (fill-in-the-blank).

mod generate;
mod io;
mod numeral;
mod sample;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_corpus, GenConfig, TemplateBank, ValueRange};
pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, DATASET_FORMAT};
pub use numeral::{is_numeral, magnitude_bucket, numeral_value};
pub use sample::{magnitude_audit_sample, sentence_bucket, split_corpus, SplitRatios};

/// Number entity classes. `Other` is code 0; the six number types follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityLabel {
    #[serde(rename = "O")]
    Other,
    #[serde(rename = "YEAR")]
    Year,
    #[serde(rename = "COUNT")]
    Count,
    #[serde(rename = "PERCENTAGE")]
    Percentage,
    #[serde(rename = "AGE")]
    Age,
    #[serde(rename = "SIZE")]
    Size,
    #[serde(rename = "DATE")]
    Date,
}

impl EntityLabel {
    pub const COUNT: usize = 7;

    pub const ALL: [EntityLabel; 7] = [
        EntityLabel::Other,
        EntityLabel::Year,
        EntityLabel::Count,
        EntityLabel::Percentage,
        EntityLabel::Age,
        EntityLabel::Size,
        EntityLabel::Date,
    ];

    /// The six number types, without `Other`.
    pub const ENTITIES: [EntityLabel; 6] = [
        EntityLabel::Year,
        EntityLabel::Count,
        EntityLabel::Percentage,
        EntityLabel::Age,
        EntityLabel::Size,
        EntityLabel::Date,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityLabel::Other => "O",
            EntityLabel::Year => "YEAR",
            EntityLabel::Count => "COUNT",
            EntityLabel::Percentage => "PERCENTAGE",
            EntityLabel::Age => "AGE",
            EntityLabel::Size => "SIZE",
            EntityLabel::Date => "DATE",
        }
    }

    pub fn is_entity(self) -> bool {
        self != EntityLabel::Other
    }

    /// Row of this entity among the six number types (0..6); `None` for `Other`.
    pub fn entity_index(self) -> Option<usize> {
        self.code().checked_sub(1)
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityLabel {
    type Err = Error;

    /// Exact uppercase names only ("O", "YEAR", ...).
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown entity label `{s}`")))
    }
}

/// One dataset record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<EntityLabel>,
    pub question: Option<Vec<String>>,
    /// Inclusive token range over `tokens`.
    pub answer_span: Option<(usize, usize)>,
    pub mask_index: Option<usize>,
    pub mask_entity: Option<EntityLabel>,
    pub mask_answer: Option<String>,
    /// Per-token tagger confidence, present on model-annotated corpora.
    pub confidences: Option<Vec<f64>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, labels: Vec<EntityLabel>) -> Self {
        Sentence {
            id: id.into(),
            tokens,
            labels,
            question: None,
            answer_span: None,
            mask_index: None,
            mask_entity: None,
            mask_answer: None,
            confidences: None,
        }
    }

    /// Checks every record invariant, returning the offending field name on failure.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.labels.len() != self.tokens.len() {
            return Err((
                "labels",
                format!(
                    "{} labels for {} tokens",
                    self.labels.len(),
                    self.tokens.len()
                ),
            ));
        }
        for (i, (tok, lab)) in self.tokens.iter().zip(&self.labels).enumerate() {
            if lab.is_entity() && !is_numeral(tok) {
                return Err((
                    "labels",
                    format!("token {i} `{tok}` is not a numeral but is labeled {lab}"),
                ));
            }
        }
        if let Some((s, e)) = self.answer_span {
            if s > e || e >= self.tokens.len() {
                return Err((
                    "answer_span",
                    format!("[{s},{e}] outside 0..{}", self.tokens.len()),
                ));
            }
        }
        match (self.mask_index, self.mask_entity) {
            (Some(i), Some(ent)) => {
                if i >= self.tokens.len() {
                    return Err(("mask_index", format!("{i} out of range")));
                }
                if !ent.is_entity() {
                    return Err(("mask_entity", "must not be O".into()));
                }
                if self.labels[i] != ent {
                    return Err((
                        "mask_entity",
                        format!("token {i} is labeled {} not {ent}", self.labels[i]),
                    ));
                }
                if let Some(ans) = &self.mask_answer {
                    if ans != &self.tokens[i] {
                        return Err((
                            "mask_answer",
                            format!("`{ans}` differs from masked token `{}`", self.tokens[i]),
                        ));
                    }
                }
            }
            (None, None) => {
                if self.mask_answer.is_some() {
                    return Err(("mask_answer", "present without mask_index".into()));
                }
            }
            (Some(_), None) => return Err(("mask_entity", "required with mask_index".into())),
            (None, Some(_)) => return Err(("mask_index", "required with mask_entity".into())),
        }
        if let Some(c) = &self.confidences {
            if c.len() != self.tokens.len() {
                return Err(("confidences", format!("{} values for {} tokens", c.len(), self.tokens.len())));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::invalid(format!("sentence `{}`: {field}: {msg}", self.id)))
    }

    /// Index and value of the first numeral token, if any.
    pub fn first_numeral(&self) -> Option<(usize, f64)> {
        self.tokens
            .iter()
            .enumerate()
            .find_map(|(i, t)| numeral_value(t).map(|v| (i, v)))
    }

    pub fn has_label(&self, label: EntityLabel) -> bool {
        self.labels.contains(&label)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, provenance: impl Into<String>) -> Self {
        Corpus {
            sentences,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.sentences.len());
        for s in &self.sentences {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sentence id `{}`", s.id)));
            }
        }
        Ok(())
    }

    /// Per-label token counts, indexed by label code.
    pub fn label_histogram(&self) -> [usize; EntityLabel::COUNT] {
        let mut h = [0; EntityLabel::COUNT];
        for l in self.sentences.iter().flat_map(|s| &s.labels) {
            h[l.code()] += 1;
        }
        h
    }

    /// Counts of sentences by their masked (primary) entity, indexed by label code.
    pub fn primary_histogram(&self) -> [usize; EntityLabel::COUNT] {
        let mut h = [0; EntityLabel::COUNT];
        for e in self.sentences.iter().filter_map(|s| s.mask_entity) {
            h[e.code()] += 1;
        }
        h
    }

    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Corpus {
        Corpus {
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            provenance: provenance.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn label_codes_are_stable() {
        for (i, l) in EntityLabel::ALL.iter().enumerate() {
            assert_eq!(l.code(), i);
            assert_eq!(EntityLabel::from_code(i), Some(*l));
            assert_eq!(l.as_str().parse::<EntityLabel>().unwrap(), *l);
        }
        assert_eq!(EntityLabel::ALL.len(), 7);
        assert_eq!(EntityLabel::Other.code(), 0);
        assert!("year".parse::<EntityLabel>().is_err());
    }

    #[test]
    fn sentence_invariants() {
        use EntityLabel::*;
        let mut s = Sentence::new("a", toks("in 2003 ."), vec![Other, Year, Other]);
        assert!(s.check().is_ok());
        s.labels.pop();
        assert_eq!(s.check().unwrap_err().0, "labels");
        s.labels = vec![Year, Other, Other];
        assert_eq!(s.check().unwrap_err().0, "labels");
        s.labels = vec![Other, Year, Other];
        s.answer_span = Some((1, 3));
        assert_eq!(s.check().unwrap_err().0, "answer_span");
        s.answer_span = Some((1, 1));
        s.mask_index = Some(1);
        s.mask_entity = Some(Count);
        assert_eq!(s.check().unwrap_err().0, "mask_entity");
        s.mask_entity = Some(Year);
        s.mask_answer = Some("2003".into());
        assert!(s.check().is_ok());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = Sentence::new("x", toks("a"), vec![EntityLabel::Other]);
        let c = Corpus::new(vec![s.clone(), s], "t");
        assert!(c.validate().is_err());
    }
}
